"""Accounts with overdraft protection."""


class InsufficientFunds(Exception):
    def __init__(self, requested, available):
        super().__init__(f"requested {requested}, only {available} available")
        self.requested = requested
        self.available = available


class Account:
    def __init__(self, owner, balance=0):
        self.owner = owner
        self._balance = balance
        self._history = []

    def deposit(self, amount):
        if amount <= 0:
            raise ValueError("amount must be positive")
        self._balance += amount
        self._history.append(("deposit", amount))

    def withdraw(self, amount):
        if amount > self._balance:
            raise InsufficientFunds(amount, self._balance)
        self._balance -= amount
        self._history.append(("withdraw", amount))
        return self._balance

    def balance(self):
        return self._balance

    def can_withdraw(self, amount):
        return 0 < amount <= self._balance

    def describe(self):
        return f"{self.owner}: {self._balance}"

    def transactions(self):
        return len(self._history)

    def last_operation(self):
        if not self._history:
            return None
        kind, amount = self._history[-1]
        return kind


def transfer(source, target, amount):
    if not source.can_withdraw(amount):
        return False
    source.withdraw(amount)
    target.deposit(amount)
    return True


def safe_withdraw(account, amount):
    try:
        return account.withdraw(amount)
    except InsufficientFunds as exc:
        return -exc.requested
