#!/usr/bin/env python3
"""Regenerate the bundled COVID-like CSV fixtures deterministically.

Four country datasets with deliberately heterogeneous schemas: different
naming conventions (snake_case, Title Case, CamelCase), date formats, and
granularity levels. Cell values are synthetic.
"""

import csv
import random
from datetime import date, timedelta
from pathlib import Path

ROWS = 1000
START = date(2020, 3, 1)
OUT = Path(__file__).resolve().parent.parent / "crates" / "privfusion" / "fixtures"

IT_REGIONS = [
    "Lombardia", "Lazio", "Campania", "Sicilia", "Veneto", "Piemonte",
    "Puglia", "Toscana", "Calabria", "Sardegna", "Liguria", "Marche",
    "Abruzzo", "Umbria", "Basilicata", "Molise", "Friuli", "Trentino",
    "Valle dAosta", "Emilia",
]
IT_PROVINCES = [
    ("Milano", "MI"), ("Roma", "RM"), ("Napoli", "NA"), ("Palermo", "PA"),
    ("Venezia", "VE"), ("Torino", "TO"), ("Bari", "BA"), ("Firenze", "FI"),
    ("Catanzaro", "CZ"), ("Cagliari", "CA"), ("Genova", "GE"), ("Ancona", "AN"),
    ("Pescara", "PE"), ("Perugia", "PG"), ("Potenza", "PZ"), ("Campobasso", "CB"),
    ("Trieste", "TS"), ("Trento", "TN"), ("Aosta", "AO"), ("Bologna", "BO"),
]
US_COUNTIES = [
    "Cook", "Harris", "Maricopa", "San Diego", "Orange", "Miami-Dade",
    "Dallas", "Kings", "Riverside", "Clark", "King", "Queens", "Tarrant",
    "Santa Clara", "Broward", "Bexar", "Wayne", "Alameda", "Middlesex",
    "Suffolk", "Philadelphia", "Hillsborough", "Bronx", "Palm Beach", "Travis",
]
US_STATES = [
    "Illinois", "Texas", "Arizona", "California", "Florida", "New York",
    "Nevada", "Washington", "Michigan", "Massachusetts", "Pennsylvania",
]


def days():
    return [START + timedelta(days=i) for i in range(ROWS)]


def cumulative(rng, start, step_max):
    total = start
    out = []
    for _ in range(ROWS):
        total += rng.randint(0, step_max)
        out.append(total)
    return out


def write(name, header, rows):
    OUT.mkdir(parents=True, exist_ok=True)
    with open(OUT / name, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    print(f"wrote {OUT / name}")


def gen_idn():
    rng = random.Random(101)
    cases = cumulative(rng, 100000, 400)
    rows = [
        [f"{d.month}/{d.day}/{d.year}", "IDN", "Indonesia", cases[i]]
        for i, d in enumerate(days())
    ]
    write("idn.csv", ["Date", "Location ISO Code", "Location", "Total Cases"], rows)


def gen_afg():
    rng = random.Random(202)
    cases = cumulative(rng, 110000, 350)
    rows = []
    for i, d in enumerate(days()):
        new = "" if rng.random() < 0.02 else rng.randint(0, 1500)
        density = "" if rng.random() < 0.02 else f"{rng.uniform(10.0, 300.0):.2f}"
        rows.append(
            [d.isoformat(), "AFG", "Asia", "Afghanistan", cases[i], new, density]
        )
    write(
        "afg.csv",
        ["date", "iso_code", "continent", "location", "total_cases", "new_cases",
         "population_density"],
        rows,
    )


def gen_it():
    rng = random.Random(303)
    cases = cumulative(rng, 120000, 450)
    rows = []
    for i, d in enumerate(days()):
        code = rng.randint(1, 20)
        province, abbrev = rng.choice(IT_PROVINCES)
        rows.append([
            f"{d.isoformat()}T18:00:00",
            "Italy",
            code,
            IT_REGIONS[code - 1],
            province,
            abbrev,
            f"{rng.uniform(36.0, 46.9):.4f}",
            f"{rng.uniform(7.0, 18.9):.4f}",
            cases[i],
        ])
    write(
        "it.csv",
        ["date", "Country", "RegionCode", "RegionName", "ProvinceName",
         "ProvinceAbbreviation", "Lattitude", "Longitude", "TotalPositiveCases"],
        rows,
    )


def gen_us():
    rng = random.Random(404)
    cases = cumulative(rng, 130000, 500)
    rows = [
        [d.isoformat(), rng.choice(US_COUNTIES), rng.choice(US_STATES), cases[i]]
        for i, d in enumerate(days())
    ]
    write("us.csv", ["date", "county", "state", "cases"], rows)


if __name__ == "__main__":
    gen_idn()
    gen_afg()
    gen_it()
    gen_us()
