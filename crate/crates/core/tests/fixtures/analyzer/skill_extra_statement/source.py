def f(a):
    b = a
    b = b * 2
    return b
