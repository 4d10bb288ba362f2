"""Coloured status lines for the command-line runs"""
from typing import Sequence

import colorama
from colorama import Fore, Style

colorama.init(autoreset=True)

STYLES = {
    'start': (Fore.CYAN, "🚀"),
    'progress': (Fore.BLUE, "📊"),
    'warning': (Fore.MAGENTA, "⚠️"),
    'success': (Fore.GREEN, "✅"),
    'error': (Fore.RED, "❌"),
}

def colored_print(kind: str, message: str):
    color, icon = STYLES[kind]
    print(f"{color}{icon} {message}{Style.RESET_ALL}")

def format_ranks(ranks: Sequence[int]) -> str:
    """TT ranks as a bond chain, e.g. 1-5-25-5-1 for l = 1"""
    return "-".join(str(int(r)) for r in ranks)

def cyan_status(message):
    colored_print('start', message)

def blue_status(message):
    colored_print('progress', message)

def rank_status(label: str, ranks: Sequence[int], storage: int):
    colored_print('progress', f"{label} ranks {format_ranks(ranks)} ({storage} floats)")

def magenta_warning(message):
    colored_print('warning', message)

def green_success(message):
    colored_print('success', message)

def red_error(message):
    colored_print('error', message)
