"""Double-auction order book with discriminatory (pay-as-mean) pricing.

Units: limit prices are integer milli-cents per kWh, energy is integer Wh,
money is integer milli-cents.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from fractions import Fraction

from . import canonical, kernels

SLOT_MINUTES = 15
SLOTS_PER_DAY = 24 * 60 // SLOT_MINUTES
DUST_SCALE = 1000  # dust is tracked in thousandths of a milli-cent


class MarketError(Exception):
    pass


class DuplicateOrderId(MarketError):
    pass


class WrongSlot(MarketError):
    pass


class ZeroEnergy(MarketError):
    pass


class SlotStillOpen(MarketError):
    pass


class Side(str, enum.Enum):
    BUY = "BUY"
    SELL = "SELL"


@dataclass(frozen=True)
class Order:
    order_id: bytes
    side: Side
    limit_price: int
    energy: int
    slot_index: int
    arrival_seq: int = -1

    def to_json(self) -> dict:
        return {
            "order_id": self.order_id.hex(),
            "side": self.side.value,
            "limit_price": self.limit_price,
            "energy": self.energy,
            "slot_index": self.slot_index,
            "arrival_seq": self.arrival_seq,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Order":
        return cls(bytes.fromhex(obj["order_id"]), Side(obj["side"]), int(obj["limit_price"]),
                   int(obj["energy"]), int(obj["slot_index"]), int(obj.get("arrival_seq", -1)))


def max_payment(limit_price: int, energy: int) -> int:
    return limit_price * energy // 1000


@dataclass(frozen=True)
class Trade:
    buy_order_id: bytes
    sell_order_id: bytes
    energy: int
    trade_price: int
    payment: int
    buy_limit: int
    sell_limit: int

    @property
    def dust(self) -> int:
        """Rounding remainder of this trade in thousandths of a milli-cent."""
        return self.trade_price * self.energy - self.payment * 1000

    def to_json(self) -> dict:
        return {
            "buy_order_id": self.buy_order_id.hex(),
            "sell_order_id": self.sell_order_id.hex(),
            "energy": self.energy,
            "trade_price": self.trade_price,
            "payment": self.payment,
            "buy_limit": self.buy_limit,
            "sell_limit": self.sell_limit,
        }


@dataclass(frozen=True)
class UtilityFill:
    order_id: bytes
    side: Side
    energy: int
    tariff: int

    @property
    def amount(self) -> int:
        return self.tariff * self.energy // 1000

    def to_json(self) -> dict:
        return {"order_id": self.order_id.hex(), "side": self.side.value, "energy": self.energy,
                "tariff": self.tariff, "amount": self.amount}


@dataclass(frozen=True)
class Tariffs:
    grid_tariff: int = 25000
    feedin_tariff: int = 8000

    def __post_init__(self):
        if self.grid_tariff < 0 or self.feedin_tariff < 0:
            raise ValueError("tariffs must be non-negative")


@dataclass(frozen=True)
class ClearingResult:
    slot_index: int
    trades: tuple
    residual_buys: tuple  # (order_id, unmatched Wh)
    residual_sells: tuple
    utility_fills: tuple
    dust_thousandths: int

    @property
    def dust(self) -> Fraction:
        return Fraction(self.dust_thousandths, DUST_SCALE)

    @property
    def volume(self) -> int:
        return sum(t.energy for t in self.trades)

    @property
    def vwap(self) -> int:
        vol = self.volume
        return sum(t.trade_price * t.energy for t in self.trades) // vol if vol else 0

    def matched_energy(self) -> dict:
        out: dict = {}
        for t in self.trades:
            out[t.buy_order_id] = out.get(t.buy_order_id, 0) + t.energy
            out[t.sell_order_id] = out.get(t.sell_order_id, 0) + t.energy
        return out

    def to_json(self) -> dict:
        return {
            "slot_index": self.slot_index,
            "trades": [t.to_json() for t in self.trades],
            "residual_buys": [[oid.hex(), e] for oid, e in self.residual_buys],
            "residual_sells": [[oid.hex(), e] for oid, e in self.residual_sells],
            "utility_fills": [u.to_json() for u in self.utility_fills],
            "dust_thousandths": self.dust_thousandths,
        }

    def canonical(self) -> bytes:
        return canonical.encode(self.to_json())


@dataclass
class OrderBook:
    """Collects the orders of one slot. Single writer; cleared once closed."""

    slot_index: int
    is_open: bool = True
    orders: dict = field(default_factory=dict)
    _next_seq: int = 0

    def submit(self, order: Order) -> Order:
        if not self.is_open or order.slot_index != self.slot_index:
            raise WrongSlot(f"order for slot {order.slot_index}, book holds slot {self.slot_index}"
                            + ("" if self.is_open else " (closed)"))
        if order.energy <= 0:
            raise ZeroEnergy("energy must be positive")
        if order.limit_price < 0:
            raise ValueError("limit price must be non-negative")
        if order.order_id in self.orders:
            raise DuplicateOrderId(order.order_id.hex())
        stored = replace(order, arrival_seq=self._next_seq)
        self._next_seq += 1
        self.orders[order.order_id] = stored
        return stored

    def close(self) -> None:
        self.is_open = False

    @property
    def buys(self) -> list:
        return [o for o in self.orders.values() if o.side is Side.BUY]

    @property
    def sells(self) -> list:
        return [o for o in self.orders.values() if o.side is Side.SELL]


def submit(book: OrderBook, order: Order) -> OrderBook:
    book.submit(order)
    return book


def clear(book: OrderBook, fallback: Tariffs | None = None) -> ClearingResult:
    """Clear a closed book.

    Sells are prioritized cheapest first and buys highest first, ties by
    arrival. The traded volume is the largest that can be paired at all; the
    served orders are the priority prefixes of that size on both sides, paired
    marginal-to-marginal so every pair crosses. Each pair trades at
    floor((buy + sell) / 2). Residual energy goes to the utility when
    ``fallback`` tariffs are given, else it is reported as residual.
    """
    if book.is_open:
        raise SlotStillOpen(f"slot {book.slot_index} is still open")
    buys = sorted(book.buys, key=lambda o: (-o.limit_price, o.arrival_seq))
    sells = sorted(book.sells, key=lambda o: (o.limit_price, o.arrival_seq))
    matches = kernels.match_sorted([o.limit_price for o in buys], [o.energy for o in buys],
                                   [o.limit_price for o in sells], [o.energy for o in sells])
    trades = []
    buy_left = {o.order_id: o.energy for o in buys}
    sell_left = {o.order_id: o.energy for o in sells}
    dust = 0
    for bi, si, energy, price in matches:
        b, s = buys[bi], sells[si]
        trade = Trade(b.order_id, s.order_id, energy, price, price * energy // 1000, b.limit_price, s.limit_price)
        trades.append(trade)
        dust += trade.dust
        buy_left[b.order_id] -= energy
        sell_left[s.order_id] -= energy

    residual_b = tuple((o.order_id, buy_left[o.order_id]) for o in buys if buy_left[o.order_id])
    residual_s = tuple((o.order_id, sell_left[o.order_id]) for o in sells if sell_left[o.order_id])
    fills: tuple = ()
    if fallback is not None:
        fills = tuple(UtilityFill(oid, Side.BUY, e, fallback.grid_tariff) for oid, e in residual_b) + tuple(
            UtilityFill(oid, Side.SELL, e, fallback.feedin_tariff) for oid, e in residual_s)
        residual_b = residual_s = ()
    return ClearingResult(book.slot_index, tuple(trades), residual_b, residual_s, fills, dust)


@dataclass(frozen=True)
class Surplus:
    buyer_surplus: int
    seller_surplus: int

    @property
    def total(self) -> int:
        return self.buyer_surplus + self.seller_surplus


def surplus(result: ClearingResult) -> Surplus:
    buyer = sum((t.buy_limit - t.trade_price) * t.energy // 1000 for t in result.trades)
    seller = sum((t.trade_price - t.sell_limit) * t.energy // 1000 for t in result.trades)
    return Surplus(buyer, seller)


def check_result(result: ClearingResult, orders) -> None:
    """Assert the clearing invariants against the submitted orders; raises AssertionError."""
    by_id = {o.order_id: o for o in orders}
    for t in result.trades:
        b, s = by_id[t.buy_order_id], by_id[t.sell_order_id]
        assert b.side is Side.BUY and s.side is Side.SELL
        assert t.trade_price == (b.limit_price + s.limit_price) // 2
        assert s.limit_price <= t.trade_price <= b.limit_price
        assert t.payment == t.trade_price * t.energy // 1000 >= 0
        assert 0 <= t.dust < DUST_SCALE
    assert result.dust_thousandths == sum(t.dust for t in result.trades)
    assert result.dust_thousandths < DUST_SCALE * max(1, len(result.trades)) or not result.trades
    accounted = result.matched_energy()
    for oid, e in result.residual_buys + result.residual_sells:
        accounted[oid] = accounted.get(oid, 0) + e
    for u in result.utility_fills:
        accounted[u.order_id] = accounted.get(u.order_id, 0) + u.energy
    for o in by_id.values():
        assert accounted.get(o.order_id, 0) == o.energy, f"energy not conserved for {o.order_id.hex()}"
