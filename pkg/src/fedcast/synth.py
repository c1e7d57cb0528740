"""Synthetic weekly retail sales in the 8-column store/week schema.

Stores share a common demand structure — annual seasonality, holiday
lifts, a persistent AR component, and mild sensitivity to temperature —
while differing in scale, trend, and noise level.  That makes collaborative
training genuinely useful: a store with a short history can borrow the
shared structure it cannot estimate alone.  Output mimics the reference
data's conventions (Friday weeks, DD-MM-YYYY dates, 45 stores).
"""

from __future__ import annotations

from datetime import date as Date
from datetime import timedelta

import numpy as np

from .data import StoreRecord

DEFAULT_START = Date(2010, 2, 5)  # a Friday
DEFAULT_STORES = 45
DEFAULT_WEEKS = 143

# Week-of-year positions flagged as holiday weeks (big-event shopping weeks).
HOLIDAY_WEEKS = (6, 36, 47, 52)

WEEKS_PER_YEAR = 52.18


def _week_of_year(when: Date) -> int:
    return when.isocalendar()[1]


def generate_records(
    n_stores: int = DEFAULT_STORES,
    n_weeks: int = DEFAULT_WEEKS,
    seed: int = 0,
    start: Date = DEFAULT_START,
) -> list[StoreRecord]:
    """Deterministic synthetic records, grouped by store then date.

    Every store draws its own parameter set from a substream keyed by
    (seed, store_id), so adding stores never perturbs existing ones.
    """
    if n_stores < 1 or n_weeks < 8:
        raise ValueError("need at least 1 store and 8 weeks")
    dates = [start + timedelta(weeks=i) for i in range(n_weeks)]
    week_pos = np.arange(n_weeks, dtype=np.float64)
    woy = np.array([_week_of_year(d) for d in dates], dtype=np.float64)
    holiday = np.array([1 if w in HOLIDAY_WEEKS else 0 for w in woy.astype(int)])

    records = []
    for store_id in range(1, n_stores + 1):
        rng = np.random.default_rng(np.random.SeedSequence((seed, store_id)))

        base = rng.uniform(3.0e5, 2.2e6)
        trend = rng.uniform(-0.0004, 0.0010)  # relative per week
        season_amp = rng.uniform(0.05, 0.10)
        holiday_lift = rng.uniform(0.12, 0.25)
        noise_std = rng.uniform(0.025, 0.055)
        temp_offset = rng.uniform(-10.0, 10.0)

        # Persistent demand swings: AR(1) in the relative term.
        ar = np.zeros(n_weeks)
        shocks = rng.normal(0.0, 0.03, size=n_weeks)
        for t in range(1, n_weeks):
            ar[t] = 0.6 * ar[t - 1] + shocks[t]

        phase = 2.0 * np.pi * (woy - 47.0) / WEEKS_PER_YEAR
        season = season_amp * (np.cos(phase) + 0.4 * np.cos(2.0 * phase))

        temperature = (
            55.0
            + 22.0 * np.sin(2.0 * np.pi * (woy - 15.0) / WEEKS_PER_YEAR)
            + temp_offset
            + rng.normal(0.0, 3.0, size=n_weeks)
        )
        temp_dev = (temperature - 55.0) / 22.0

        fuel = np.clip(
            rng.uniform(2.4, 2.9) + np.cumsum(rng.normal(0.0, 0.03, size=n_weeks)),
            1.5, 4.5,
        )
        cpi = rng.uniform(126.0, 212.0) + 0.05 * week_pos \
            + np.cumsum(rng.normal(0.0, 0.05, size=n_weeks))
        unemployment = np.clip(
            rng.uniform(5.0, 10.0) + np.cumsum(rng.normal(0.0, 0.05, size=n_weeks)),
            3.0, 14.0,
        )

        relative = (
            1.0
            + trend * week_pos
            + season
            + holiday_lift * holiday
            - 0.02 * temp_dev
            + ar
            + rng.normal(0.0, noise_std, size=n_weeks)
        )
        sales = base * np.maximum(relative, 0.05)

        for i, when in enumerate(dates):
            records.append(
                StoreRecord(
                    store_id=store_id,
                    date=when,
                    weekly_sales=round(float(sales[i]), 2),
                    holiday_flag=bool(holiday[i]),
                    temperature=round(float(temperature[i]), 2),
                    fuel_price=round(float(fuel[i]), 3),
                    cpi=round(float(cpi[i]), 3),
                    unemployment=round(float(unemployment[i]), 3),
                )
            )
    return records


def records_to_csv(records: list[StoreRecord], date_format: str = "%d-%m-%Y") -> str:
    """Render records in the ingestion schema (formats match the reference file)."""
    lines = ["Store,Date,Weekly_Sales,Holiday_Flag,Temperature,Fuel_Price,CPI,Unemployment"]
    for r in records:
        lines.append(
            f"{r.store_id},{r.date.strftime(date_format)},{r.weekly_sales:.2f},"
            f"{1 if r.holiday_flag else 0},{r.temperature:.2f},{r.fuel_price:.3f},"
            f"{r.cpi:.3f},{r.unemployment:.3f}"
        )
    return "\n".join(lines) + "\n"


def generate_csv(
    n_stores: int = DEFAULT_STORES,
    n_weeks: int = DEFAULT_WEEKS,
    seed: int = 0,
    start: Date = DEFAULT_START,
) -> str:
    return records_to_csv(generate_records(n_stores, n_weeks, seed, start))
