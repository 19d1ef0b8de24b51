def value_iteration(P, R, gamma, tol):
    V = {s: 0.0 for s in P}
    while True:
        delta = 0.0
        for s in P:
            best = max(R[s][a] + gamma * sum(p * V[t] for t, p in P[s][a]) for a in P[s])
            delta = max(delta, abs(best - V[s]))
            V[s] = best
        if delta < tol:
            return V


if __name__ == "__main__":
    P = {"A": {"stay": [("A", 1.0)], "go": [("B", 1.0)]}, "B": {"stay": [("B", 1.0)]}}
    R = {"A": {"stay": 0.0, "go": 1.0}, "B": {"stay": 0.0}}
    print(value_iteration(P, R, 0.5, 1e-9)["A"] / 0)
