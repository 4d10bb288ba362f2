# Test package; fixtures live in conftest.py
