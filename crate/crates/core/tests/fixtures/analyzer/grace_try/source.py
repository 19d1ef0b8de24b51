def load(path):
    try:
        data = read(path)
    except OSError:
        data = ""
    return data


def read(path):
    return open(path).read()
