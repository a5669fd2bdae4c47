def non_empty(value):
    if value is None or value == "":
        return False
    return True


def positive(n):
    return n > 0


def validate_record(record):
    ok = True
    if not non_empty(record.get("name")):
        ok = False
    if not positive(record.get("count", 0)):
        ok = False
    return ok
