print(foo)
