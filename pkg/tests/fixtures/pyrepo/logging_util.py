import sys


def log(message):
    sys.stderr.write(message + "\n")


def log_all(messages):
    for m in messages:
        log(m)
