def q_update(q, s, a, r, s_next, alpha, gamma):
    best_next = min(q[s_next].values()) if q[s_next] else 0.0
    target = r + gamma * best_next
    q[s][a] += alpha * (target - q[s][a])
    return q[s][a]


def greedy(q, s):
    return max(q[s], key=q[s].get)


if __name__ == "__main__":
    table = {0: {"L": 0.0, "R": 0.0}, 1: {"L": 1.0, "R": 0.0}}
    print(q_update(table, 0, "R", 1.0, 1, 0.5, 0.9))
