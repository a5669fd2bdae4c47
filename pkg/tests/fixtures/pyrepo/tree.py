class Node:
    def __init__(self, value):
        self.value = value
        self.children = []

    def add(self, child):
        self.children.append(child)


def depth(node):
    if not node.children:
        return 1
    best = 0
    for child in node.children:
        d = depth(child)
        if d > best:
            best = d
    return best + 1
