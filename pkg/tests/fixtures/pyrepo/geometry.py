"""Operations over shape collections."""

from shapes.circle import Circle
from shapes.rect import Rectangle, Square


def total_area(shapes):
    total = 0
    for s in shapes:
        total = total + s.area()
    return total


def sample_shapes():
    return [Circle(1), Rectangle(2, 3), Square(4)]


def describe_all(shapes):
    out = []
    for s in shapes:
        out.append(s.describe())
    return out
