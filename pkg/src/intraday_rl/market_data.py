"""Transaction ticks to minute-resolution product series.

Each hourly product is traded from 4 h before delivery up to 30 min before
delivery. Both endpoint minutes are part of the window, which yields 211
minute buckets. Buckets are left-closed and right-open: a tick at second 0
of minute ``m`` belongs to bucket ``m``.

On-disk layout written by :func:`save_dataset`::

    <dir>/manifest.json        split manifest (train/test ids, outlier count)
    <dir>/train_stats.toml     normalization statistics (key = value)
    <dir>/products/<id>.json   one serialized ProductSeries per product
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import EPISODE_LENGTH
from .errors import EmptyInput, InsufficientData, NoSeedPrice

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
import tomli_w

logger = logging.getLogger(__name__)

WINDOW_OPEN = timedelta(hours=4)
WINDOW_CLOSE = timedelta(minutes=30)
OUTLIER_UPPER = 150.0
OUTLIER_LOWER = -50.0


def parse_utc(text: str) -> datetime:
    """Parse an ISO-8601 timestamp; naive values are taken as UTC."""
    text = text.strip()
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    ts = datetime.fromisoformat(text)
    if ts.tzinfo is None:
        return ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def format_product_id(product: datetime) -> str:
    return product.astimezone(timezone.utc).strftime("%Y%m%dT%H%MZ")


def window_start(product: datetime) -> datetime:
    return product - WINDOW_OPEN


def window_minutes(product: datetime) -> list[datetime]:
    start = window_start(product)
    return [start + timedelta(minutes=i) for i in range(EPISODE_LENGTH)]


@dataclass(frozen=True)
class Tick:
    timestamp: datetime
    product_id: datetime
    price: float
    volume: float

    def __post_init__(self):
        if not self.volume > 0:
            raise ValueError(f"tick volume must be positive, got {self.volume}")
        if not self.timestamp < self.product_id:
            raise ValueError("tick timestamp must precede delivery start")


@dataclass
class ForecastTrack:
    """Wind (15-minute blocks) and 5-minute price forecasts along one episode."""

    wind: np.ndarray
    price_5min: np.ndarray

    def __post_init__(self):
        self.wind = np.asarray(self.wind, dtype=np.float64)
        self.price_5min = np.asarray(self.price_5min, dtype=np.float64)


@dataclass
class ProductSeries:
    product_id: datetime
    prices: np.ndarray
    filled_mask: np.ndarray
    day_ahead_price: float
    forecast: ForecastTrack | None = None

    def __post_init__(self):
        self.prices = np.asarray(self.prices, dtype=np.float64)
        self.filled_mask = np.asarray(self.filled_mask, dtype=bool)
        self.day_ahead_price = float(self.day_ahead_price)

    @property
    def name(self) -> str:
        return format_product_id(self.product_id)

    def is_complete(self) -> bool:
        ok = (
            self.prices.shape == (EPISODE_LENGTH,)
            and self.filled_mask.shape == (EPISODE_LENGTH,)
            and bool(np.all(np.isfinite(self.prices)))
            and math.isfinite(self.day_ahead_price)
        )
        if not ok or self.forecast is None:
            return False
        f = self.forecast
        return (
            f.wind.shape == (EPISODE_LENGTH,)
            and f.price_5min.shape == (EPISODE_LENGTH,)
            and bool(np.all(np.isfinite(f.wind)))
            and bool(np.all(np.isfinite(f.price_5min)))
        )

    def to_dict(self) -> dict:
        out = {
            "product_id": self.product_id.isoformat(),
            "day_ahead_price": self.day_ahead_price,
            "prices": self.prices.tolist(),
            "filled_mask": self.filled_mask.astype(int).tolist(),
        }
        if self.forecast is not None:
            out["wind"] = self.forecast.wind.tolist()
            out["price_5min"] = self.forecast.price_5min.tolist()
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "ProductSeries":
        forecast = None
        if "wind" in d and "price_5min" in d:
            forecast = ForecastTrack(d["wind"], d["price_5min"])
        return cls(
            product_id=parse_utc(d["product_id"]),
            prices=d["prices"],
            filled_mask=d["filled_mask"],
            day_ahead_price=d["day_ahead_price"],
            forecast=forecast,
        )


@dataclass
class TrainStats:
    price_mean: float
    price_std: float
    wind_std: float = 0.0
    n_products: int = 0

    def to_dict(self) -> dict:
        return {
            "price_mean": self.price_mean,
            "price_std": self.price_std,
            "wind_std": self.wind_std,
            "n_products": self.n_products,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainStats":
        return cls(
            price_mean=float(d["price_mean"]),
            price_std=float(d["price_std"]),
            wind_std=float(d.get("wind_std", 0.0)),
            n_products=int(d.get("n_products", 0)),
        )


@dataclass
class DataSplit:
    train: list[ProductSeries]
    test: list[ProductSeries]
    train_stats: TrainStats
    removed_outliers: int = 0
    meta: dict = field(default_factory=dict)


def sort_ticks(ticks: Iterable[Tick]) -> list[Tick]:
    """Stable sort by timestamp; ties keep input order."""
    return sorted(ticks, key=lambda t: t.timestamp)


def aggregate_vwap(
    ticks: Sequence[Tick], product: datetime, day_ahead_price: float | None = None
) -> ProductSeries:
    """Aggregate the ticks of one product into 211 minute VWAPs.

    Minutes without trades carry the previous value forward and are flagged in
    ``filled_mask``. If the first window minute is empty, the most recent
    pre-window minute VWAP seeds the series. ``day_ahead_price`` defaults to
    the first window price.
    """
    if len(ticks) == 0:
        raise EmptyInput(f"no ticks for product {product.isoformat()}")
    start = window_start(product)
    n = len(ticks)
    idx = np.empty(n, dtype=np.int64)
    price = np.empty(n)
    vol = np.empty(n)
    for i, tk in enumerate(sort_ticks(ticks)):
        if tk.product_id != product:
            raise ValueError("tick belongs to a different product")
        idx[i] = math.floor((tk.timestamp - start).total_seconds() / 60.0)
        price[i] = tk.price
        vol[i] = tk.volume

    inside = (idx >= 0) & (idx < EPISODE_LENGTH)
    pv = np.bincount(idx[inside], weights=price[inside] * vol[inside], minlength=EPISODE_LENGTH)
    v = np.bincount(idx[inside], weights=vol[inside], minlength=EPISODE_LENGTH)
    traded = v > 0

    seed = None
    before = idx < 0
    if before.any():
        last = idx[before].max()
        sel = idx == last
        seed = float(np.sum(price[sel] * vol[sel]) / np.sum(vol[sel]))
    if not traded[0] and seed is None:
        raise NoSeedPrice(f"no trade at or before window start for {product.isoformat()}")

    prices = np.empty(EPISODE_LENGTH)
    prev = seed
    for m in range(EPISODE_LENGTH):
        if traded[m]:
            prev = pv[m] / v[m]
        prices[m] = prev
    if day_ahead_price is None:
        day_ahead_price = float(prices[0])
    return ProductSeries(product, prices, ~traded, day_ahead_price)


def filter_outlier_products(
    products: Sequence[ProductSeries], upper: float = OUTLIER_UPPER, lower: float = OUTLIER_LOWER
) -> list[ProductSeries]:
    """Keep products whose whole minute series lies within ``[lower, upper]``."""
    if not upper > lower:
        raise ValueError("upper bound must exceed lower bound")
    kept = [p for p in products if p.prices.max() <= upper and p.prices.min() >= lower]
    removed = len(products) - len(kept)
    if removed:
        logger.info("outlier filter removed %d of %d products", removed, len(products))
    return kept


def compute_train_stats(products: Sequence[ProductSeries]) -> TrainStats:
    prices = np.concatenate([p.prices for p in products])
    std = float(prices.std())
    winds = [p.forecast.wind for p in products if p.forecast is not None]
    wind_std = float(np.concatenate(winds).std()) if winds else 0.0
    return TrainStats(
        price_mean=float(prices.mean()),
        price_std=std if std > 0 else 1.0,
        wind_std=wind_std,
        n_products=len(products),
    )


def split_train_test(
    products: Sequence[ProductSeries],
    test_fraction: float | None = 0.1,
    test_after: datetime | None = None,
    upper: float = OUTLIER_UPPER,
    lower: float = OUTLIER_LOWER,
) -> DataSplit:
    """Chronological split; outliers are dropped from the training side only.

    With ``test_after`` set, every product delivered on or after that instant
    goes to the test set and ``test_fraction`` is ignored.
    """
    ordered = sorted(products, key=lambda p: p.product_id)
    if test_after is not None:
        if test_after.tzinfo is None:
            test_after = test_after.replace(tzinfo=timezone.utc)
        train = [p for p in ordered if p.product_id < test_after]
        test = [p for p in ordered if p.product_id >= test_after]
    else:
        n_test = int(round(len(ordered) * float(test_fraction)))
        train, test = ordered[: len(ordered) - n_test], ordered[len(ordered) - n_test :]
    if not train or not test:
        raise InsufficientData(f"split produced {len(train)} train / {len(test)} test products")
    kept = filter_outlier_products(train, upper, lower)
    if not kept:
        raise InsufficientData("every training product exceeded the outlier bounds")
    return DataSplit(
        train=kept,
        test=test,
        train_stats=compute_train_stats(kept),
        removed_outliers=len(train) - len(kept),
        meta={"outlier_upper": upper, "outlier_lower": lower},
    )


# --- file formats -----------------------------------------------------------


def read_ticks_csv(path: str | Path) -> list[Tick]:
    """Read ``timestamp,product,price,volume`` rows."""
    ticks = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            ticks.append(
                Tick(
                    timestamp=parse_utc(row["timestamp"]),
                    product_id=parse_utc(row["product"]),
                    price=float(row["price"]),
                    volume=float(row["volume"]),
                )
            )
    return ticks


def write_ticks_csv(ticks: Iterable[Tick], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["timestamp", "product", "price", "volume"])
        for t in ticks:
            w.writerow([t.timestamp.isoformat(), t.product_id.isoformat(), repr(t.price), repr(t.volume)])


def read_day_ahead_csv(path: str | Path) -> dict[datetime, float]:
    """Read ``product,price`` rows."""
    with open(path, newline="") as fh:
        return {parse_utc(r["product"]): float(r["price"]) for r in csv.DictReader(fh)}


def group_ticks(ticks: Iterable[Tick]) -> dict[datetime, list[Tick]]:
    groups: dict[datetime, list[Tick]] = {}
    for t in ticks:
        groups.setdefault(t.product_id, []).append(t)
    return dict(sorted(groups.items()))


def aggregate_all(ticks: Iterable[Tick], day_ahead: dict[datetime, float] | None = None) -> list[ProductSeries]:
    """Aggregate every product; products that cannot be seeded are skipped with a warning."""
    day_ahead = day_ahead or {}
    out = []
    for product, group in group_ticks(ticks).items():
        try:
            out.append(aggregate_vwap(group, product, day_ahead.get(product)))
        except NoSeedPrice as exc:
            logger.warning("skipping product: %s", exc)
    return out


def save_product(product: ProductSeries, path: str | Path) -> None:
    Path(path).write_text(json.dumps(product.to_dict()))


def load_product(path: str | Path) -> ProductSeries:
    return ProductSeries.from_dict(json.loads(Path(path).read_text()))


def save_dataset(split: DataSplit, out_dir: str | Path) -> None:
    out = Path(out_dir)
    (out / "products").mkdir(parents=True, exist_ok=True)
    for p in list(split.train) + list(split.test):
        save_product(p, out / "products" / f"{p.name}.json")
    manifest = {
        "train": [p.name for p in split.train],
        "test": [p.name for p in split.test],
        "removed_outliers": split.removed_outliers,
        **split.meta,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
    with open(out / "train_stats.toml", "wb") as fh:
        tomli_w.dump(split.train_stats.to_dict(), fh)


def load_dataset(data_dir: str | Path) -> DataSplit:
    d = Path(data_dir)
    manifest = json.loads((d / "manifest.json").read_text())
    with open(d / "train_stats.toml", "rb") as fh:
        stats = TrainStats.from_dict(tomllib.load(fh))
    train = [load_product(d / "products" / f"{n}.json") for n in manifest["train"]]
    test = [load_product(d / "products" / f"{n}.json") for n in manifest["test"]]
    meta = {k: v for k, v in manifest.items() if k not in ("train", "test", "removed_outliers")}
    return DataSplit(train, test, stats, manifest.get("removed_outliers", 0), meta)
