def total(grid):
    s = 0
    for row in grid:
        for cell in row:
            s += cell
    return s


def rows(grid):
    return len(grid)


def cols(grid):
    return len(grid[0]) if grid else 0
