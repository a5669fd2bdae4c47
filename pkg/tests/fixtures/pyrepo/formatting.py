def bullet(text):
    return "- " + str(text)


def join_lines(lines):
    return "\n".join(lines)


def indent(text, depth):
    pad = " " * depth
    out = []
    for line in text.split("\n"):
        out.append(pad + line)
    return "\n".join(out)
