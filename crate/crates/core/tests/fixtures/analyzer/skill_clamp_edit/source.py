def clamp(value, lo, hi):
    if value <= lo:
        return lo
    return min(value, hi)
