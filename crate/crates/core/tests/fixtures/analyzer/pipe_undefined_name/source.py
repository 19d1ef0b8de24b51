def moving_average(xs, k):
    out = []
    for i in range(len(xs) - k + 1):
        out.append(window_mean(xs[i:i + k]))
    return out


if __name__ == "__main__":
    print(moving_average([1, 2, 3, 4], 2))
