"""Native contract programs: a fungible token, train and hotel inventories,
and a booking contract that reserves both or neither.

Addresses cross the call boundary as Base58Check strings. Every storage
access goes through the execution object so it is gas-metered.
"""

from typing import Callable, Dict

from ..crypto import Address
from .state import Execution, Revert


class Program:
    id = ""
    functions: Dict[str, Callable] = {}

    def init(self, ex: Execution, me: Address, deployer: Address, args: dict):
        pass

    def dispatch(self, ex: Execution, me: Address, caller: Address, value: int, fn: str, args: dict):
        handler = self.functions.get(fn)
        if handler is None:
            raise Revert(f"{self.id}: no function {fn!r}")
        try:
            return handler(self, ex, me, caller, **args)
        except TypeError as exc:
            raise Revert(f"{self.id}.{fn}: bad arguments ({exc})") from None


def _amount(x) -> int:
    if not isinstance(x, int) or isinstance(x, bool) or x < 0:
        raise Revert(f"amount must be a non-negative integer, got {x!r}")
    return x


def _addr(s) -> str:
    try:
        return Address.decode(s).encoded
    except (ValueError, TypeError):
        raise Revert(f"bad address {s!r}") from None


class Token(Program):
    id = "token"

    def init(self, ex, me, deployer, args):
        supply = _amount(args.get("supply", 0))
        ex.sstore(me, "totalSupply", supply)
        ex.sstore(me, f"bal:{deployer.encoded}", supply)
        ex.emit(me, "Transfer", sender=None, recipient=deployer.encoded, amount=supply)

    def totalSupply(self, ex, me, caller):
        return ex.sload(me, "totalSupply", 0)

    def balanceOf(self, ex, me, caller, account):
        return ex.sload(me, f"bal:{_addr(account)}", 0)

    def _transfer(self, ex, me, src: str, dst: str, amount: int):
        bal = ex.sload(me, f"bal:{src}", 0)
        if bal < amount:
            raise Revert("transfer amount exceeds balance")
        ex.sstore(me, f"bal:{src}", bal - amount)
        ex.sstore(me, f"bal:{dst}", ex.sload(me, f"bal:{dst}", 0) + amount)
        ex.emit(me, "Transfer", sender=src, recipient=dst, amount=amount)

    def transfer(self, ex, me, caller, recipient, amount):
        self._transfer(ex, me, caller.encoded, _addr(recipient), _amount(amount))
        return True

    def allowance(self, ex, me, caller, owner, spender):
        return ex.sload(me, f"allow:{_addr(owner)}:{_addr(spender)}", 0)

    def approve(self, ex, me, caller, spender, amount):
        ex.sstore(me, f"allow:{caller.encoded}:{_addr(spender)}", _amount(amount))
        ex.emit(me, "Approval", owner=caller.encoded, spender=_addr(spender), amount=amount)
        return True

    def transferFrom(self, ex, me, caller, sender, recipient, amount):
        amount = _amount(amount)
        key = f"allow:{_addr(sender)}:{caller.encoded}"
        allowed = ex.sload(me, key, 0)
        if allowed < amount:
            raise Revert("transfer amount exceeds allowance")
        ex.sstore(me, key, allowed - amount)
        self._transfer(ex, me, _addr(sender), _addr(recipient), amount)
        return True


Token.functions = {
    name: getattr(Token, name)
    for name in ("totalSupply", "balanceOf", "transfer", "allowance", "approve", "transferFrom")
}


class Inventory(Program):
    """Fixed-capacity reservations keyed by booking id (train seats, hotel rooms)."""

    def init(self, ex, me, deployer, args):
        ex.sstore(me, "capacity", _amount(args.get("capacity", 0)))
        ex.sstore(me, "booked", 0)

    def booking(self, ex, me, caller, id, customer=None):
        booked = ex.sload(me, "booked", 0)
        if booked >= ex.sload(me, "capacity", 0):
            raise Revert(f"{self.id}: fully booked")
        if ex.sload(me, f"booker:{id}") is not None:
            raise Revert(f"{self.id}: booking {id} already exists")
        ex.sstore(me, f"booker:{id}", customer or caller.encoded)
        ex.sstore(me, "booked", booked + 1)
        ex.emit(me, "Booked", id=id, booker=customer or caller.encoded)
        return booked + 1

    def bookerOf(self, ex, me, caller, id):
        return ex.sload(me, f"booker:{id}")

    def available(self, ex, me, caller):
        return ex.sload(me, "capacity", 0) - ex.sload(me, "booked", 0)

    functions = {"booking": booking, "bookerOf": bookerOf, "available": available}


class Train(Inventory):
    id = "train"


class Hotel(Inventory):
    id = "hotel"


class Booking(Program):
    id = "booking"

    def init(self, ex, me, deployer, args):
        ex.sstore(me, "train", _addr(args.get("train")))
        ex.sstore(me, "hotel", _addr(args.get("hotel")))

    def order(self, ex, me, caller, id):
        train = Address.decode(ex.sload(me, "train"))
        hotel = Address.decode(ex.sload(me, "hotel"))
        # any revert below unwinds the whole transaction, so both or neither
        ex.call(me, train, "booking", {"id": id, "customer": caller.encoded})
        ex.call(me, hotel, "booking", {"id": id, "customer": caller.encoded})
        ex.emit(me, "Ordered", id=id, customer=caller.encoded)
        return True

    functions = {"order": order}


REGISTRY: Dict[str, Program] = {p.id: p for p in (Token(), Train(), Hotel(), Booking())}
