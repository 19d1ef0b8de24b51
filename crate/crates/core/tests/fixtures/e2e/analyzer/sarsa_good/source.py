def sarsa_update(q, s, a, r, s_next, a_next, alpha, gamma):
    target = r + gamma * q[s_next][a_next]
    q[s][a] += alpha * (target - q[s][a])
    return q[s][a]


def epsilon_greedy(q, s, epsilon, rng):
    if rng.random() < epsilon:
        return rng.choice(sorted(q[s]))
    return max(q[s], key=q[s].get)


if __name__ == "__main__":
    table = {0: {"L": 0.0, "R": 0.0}, 1: {"L": 1.0, "R": 0.0}}
    print(sarsa_update(table, 0, "R", 1.0, 1, "L", 0.5, 0.9))
