"""
Tensor-train Kalman filter and Volterra identification modules
"""
