"""Accuracy and macro-F1 from explicit confusion counts (exact fractions)."""

from fractions import Fraction


def confusion(preds, labels, classes):
    table = [[0] * classes for _ in range(classes)]
    for p, y in zip(preds, labels):
        table[y][p] += 1
    return table


def macro_f1(preds, labels, classes):
    table = confusion(preds, labels, classes)
    total = Fraction(0)
    for c in range(classes):
        tp = table[c][c]
        fp = sum(table[y][c] for y in range(classes)) - tp
        fn = sum(table[c]) - tp
        total += Fraction(0) if tp + fp + fn == 0 else Fraction(2 * tp, 2 * tp + fp + fn)
    return total / classes


def accuracy(preds, labels):
    return Fraction(sum(p == y for p, y in zip(preds, labels)), len(labels))


if __name__ == "__main__":
    print("accuracy [0,1,1,0] vs [0,1,0,0]:", accuracy([0, 1, 1, 0], [0, 1, 0, 0]))
    print("macro-F1 C=2 [0,0,1,1] vs [0,1,1,1]:", macro_f1([0, 0, 1, 1], [0, 1, 1, 1], 2))
    print("macro-F1 C=3 with an absent class:", macro_f1([0, 1, 1, 0], [0, 1, 1, 0], 3))
