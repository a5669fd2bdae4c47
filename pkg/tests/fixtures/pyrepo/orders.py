from accounts import Account


def settle(order, account):
    # a settled order debits the buyer account
    account.withdraw(order["total"])
    return True


def open_account(owner):
    return Account(owner, 0)
