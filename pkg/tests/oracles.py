"""Slow, direct re-implementations used as independent oracles in the tests."""

from arwlab.instructions import LEFT, RIGHT, SLEEP

FIXTURE_ROWS = {
    0: "SRSSLLRLRLRRLRRLRSLRRLSRR",
    1: "RLSLRRSSRLRSLLRRLRLRSRSLR",
    2: "SLRRLSLSRLLRSLLSLSRRSSLLS",
}
CODE = {"L": LEFT, "R": RIGHT, "S": SLEEP}


def fixture_letter(site: int, index: int) -> str:
    return "L" if index == 0 else FIXTURE_ROWS[site][index - 1]


def counts_by_scan(instr, u: int) -> tuple[int, int]:
    """Signed left/right counts by walking the indices one at a time; ``instr(i)`` is a letter code."""
    lt = rt = 0
    if u >= 0:
        for i in range(1, u + 1):
            c = instr(i)
            lt += c == LEFT
            rt += c == RIGHT
    else:
        for i in range(u + 1, 1):
            c = instr(i)
            lt -= c == LEFT
            rt -= c == RIGHT
    return lt, rt


def fixture_counts(site: int, u: int) -> tuple[int, int]:
    return counts_by_scan(lambda i: CODE[fixture_letter(site, i)], u)


def fixture_height(u: tuple, sigma: tuple, v: int) -> int:
    def c(w):
        if w < 0 or w >= len(u) or u[w] == 0:
            return 0, 0
        return fixture_counts(w, u[w])

    return sigma[v] + c(v - 1)[1] + c(v + 1)[0] - c(v)[0] - c(v)[1]


def fixture_stable(u: tuple, sigma: tuple, sites) -> bool:
    for v in sites:
        h = fixture_height(u, sigma, v)
        asleep = u[v] != 0 and fixture_letter(v, u[v]) == "S"
        if h not in (0, 1) or (h == 1) != asleep:
            return False
    return True


def naive_stabilize(counts, src, a: int, ring: bool = False):
    """Topple the lowest unstable site one instruction at a time.

    Returns ``(odometer, counts, asleep, emitted_left, emitted_right, tau)``.
    """
    L = len(counts)
    cnt = [int(c) for c in counts]
    asleep = [False] * L
    odo = [0] * L
    out_l = out_r = tau = 0
    while True:
        i = next((k for k in range(L) if cnt[k] > 0 and not asleep[k]), None)
        if i is None:
            break
        odo[i] += 1
        tau += 1
        ins = int(src.instruction_at(a + i, odo[i]))
        if ins == SLEEP:
            if cnt[i] == 1:
                asleep[i] = True
            continue
        cnt[i] -= 1
        j = i - 1 if ins == LEFT else i + 1
        if ring:
            j %= L
        if 0 <= j < L:
            cnt[j] += 1
            asleep[j] = False
        elif j < 0:
            out_l += 1
        else:
            out_r += 1
    return odo, cnt, asleep, out_l, out_r, tau


def reduced_by_scan(src, site: int, start: int, count: int):
    """First ``count`` non-sleep letters from index ``start`` with next-is-sleep flags."""
    a, b = [], []
    i = start
    while len(a) < count:
        c = int(src.instruction_at(site, i))
        if c != SLEEP:
            a.append(c)
            b.append(int(int(src.instruction_at(site, i + 1)) == SLEEP))
        i += 1
    return a, b


def primitives_from_letters(a, b):
    """Widths and markers of the complete diagonals in a letter/flag sequence that starts with a left."""
    widths, markers = [], []
    for letter, bit in zip(a, b):
        if letter == LEFT:
            widths.append(0)
            markers.append([bit])
        else:
            widths[-1] += 1
            markers[-1].append(bit)
    # the last diagonal may be cut short
    return widths[:-1], [tuple(m) for m in markers[:-1]]


def paths_by_infects(prims, n: int, infects, Cell):
    """All infection paths from ``(0,0)_0`` by testing ``infects`` against every cell of a box."""
    out = []

    def rec(path):
        cur = path[-1]
        if cur.k == n:
            out.append(tuple(path))
            return
        p = prims.get(cur.k + 1)
        top = p.hi(cur.r + cur.s)
        for x in range(top + 2):
            for ds in (0, 1):
                nxt = Cell(x, cur.s + ds, cur.k + 1)
                if infects(p, cur, nxt):
                    rec(path + [nxt])

    rec([Cell(0, 0, 0)])
    return out
