"""Regenerates the bundled input tables.

Printed excerpts from the source publication are used verbatim where they
exist (German smoker, state and age 20-33 distributions; Italian insured
rates for men aged 20-29). Every other value is a synthetic completion and
the sidecar `note` of each file says which rows are which.

Run from the repository root: python3 data/generate.py
"""

import math
import os

ROOT = os.path.dirname(os.path.abspath(__file__))
AGES = list(range(20, 114))
GENDERS = ["F", "M"]
SMOKERS = ["yes", "no"]
HAZARD = 1.4


def write(country, name, columns, rows, meta):
    d = os.path.join(ROOT, country)
    os.makedirs(d, exist_ok=True)
    with open(os.path.join(d, name + ".csv"), "w", encoding="utf-8") as f:
        f.write(",".join(columns + ["value"]) + "\n")
        for r in rows:
            *labels, v = r
            f.write(",".join(str(x) for x in labels) + "," + fmt(v) + "\n")
    with open(os.path.join(d, name + ".meta.toml"), "w", encoding="utf-8") as f:
        for k, v in meta.items():
            if isinstance(v, bool):
                f.write(f"{k} = {'true' if v else 'false'}\n")
            elif isinstance(v, (int, float)):
                f.write(f"{k} = {v!r}\n")
            elif isinstance(v, list):
                f.write(f"{k} = [" + ", ".join(f'"{x}"' for x in v) + "]\n")
            else:
                f.write(f'{k} = "{v}"\n')


def fmt(v):
    if isinstance(v, str):
        return v
    return repr(round(v, 12)) if v != 0 else "0"


def age_shape(start_age, start_value, decay):
    """Synthetic survival-shaped age profile continuing from start_value."""
    out = {}
    for a in AGES:
        if a <= start_age:
            continue
        t = a - start_age
        surv = math.exp(-0.0004 / 0.09 * (math.exp(0.09 * (t + start_age - 20)) - math.exp(0.09 * (start_age - 20))))
        out[a] = start_value * math.exp(-decay * t) * surv
    return out


def complete_age_column(printed, total=100.0):
    """Printed rows kept; later ages continue from the last printed value
    with a synthetic bump (large middle-aged cohorts) and a Gompertz
    survival decline, sized so the column sums to `total`."""
    last = max(printed)
    surv = age_shape(last, 1.0, 0.0)
    bump = {a: math.exp(-(((a - 58) / 12.0) ** 2)) for a in surv}
    remainder = (total - sum(printed.values())) / printed[last]
    amp = (remainder - sum(surv.values())) / sum(bump[a] * surv[a] for a in surv)
    col = dict(printed)
    for a in surv:
        col[a] = printed[last] * (1.0 + amp * bump[a]) * surv[a]
    return col


def synthetic_age_column(peak, decay):
    raw = {}
    for a in AGES:
        ramp = 1.0 + 0.25 * math.exp(-((a - 55) / 12.0) ** 2)
        raw[a] = ramp * math.exp(-decay * (a - 20))
    tail = age_shape(20, 1.0, 0.0)
    for a in AGES:
        if a > 20:
            raw[a] *= tail[a]
    s = sum(raw.values())
    return {a: 100.0 * v / s for a, v in raw.items()}


def population_rate_male(a):
    x = math.exp(-9.0 + 0.1 * (a - 20))
    return 0.0005 + 0.6 * x / (1.0 + x)


def split(rate, prevalence, h=HAZARD):
    no = rate / (1.0 - prevalence + prevalence * h)
    return {"yes": h * no, "no": no}


def rate_meta(note, conditional=None):
    m = {"kind": "rate", "units": "rate", "note": note}
    return m


def distribution_meta(note, conditional_on=None, normalize=False, tol=None):
    m = {"kind": "probability", "units": "percent"}
    if conditional_on:
        m["conditional_on"] = conditional_on
    if normalize:
        m["normalize"] = True
    if tol is not None:
        m["rounding_tolerance"] = tol
    m["note"] = note
    return m


# ---------------------------------------------------------------- Germany

DE_SMOKER = {"F": 20.8, "M": 27.0}
DE_STATES = [
    ("Baden-Württemberg", 13.4),
    ("Bayern", 15.9),
    ("Berlin", 4.47),
    ("Brandenburg", 3.05),
    ("Bremen", 0.817),
    ("Hamburg", 2.26),
    ("Hessen", 7.58),
    ("Mecklenburg-Vorpommern", 1.92),
    ("Niedersachsen", 9.64),
    ("Nordrhein-Westfalen", 21.5),
    ("Rheinland-Pfalz", 4.93),
    ("Saarland", 1.17),
    ("Sachsen", 4.83),
    ("Sachsen-Anhalt", 2.58),
    ("Schleswig-Holstein", 3.50),
    ("Thüringen", 2.51),
]
DE_AGE_PRINTED = {
    "F": [1.439913, 1.507098, 1.503754, 1.483638, 1.515971, 1.573950, 1.609090,
          1.671727, 1.823225, 1.809394, 1.846709, 1.812673, 1.790005, 1.739514],
    "M": [1.5818712, 1.6599224, 1.6463640, 1.6237836, 1.6515359, 1.7035385, 1.7303510,
          1.7916157, 1.9605025, 1.9270780, 1.9747674, 1.9276493, 1.8826642, 1.8217951],
}


def germany():
    write("germany", "gender", ["gender"], [("F", 51.0), ("M", 49.0)],
          distribution_meta("gender shares (percent)"))
    cols = {}
    for g in GENDERS:
        printed = {20 + i: v for i, v in enumerate(DE_AGE_PRINTED[g])}
        cols[g] = complete_age_column(printed)
    write("germany", "age_gender", ["age", "gender"],
          [(a, g, cols[g][a]) for a in AGES for g in GENDERS],
          distribution_meta("percent of each gender by age; ages 20-33 printed, ages 34-113 synthetic",
                            conditional_on=["gender"], normalize=True, tol=1e-4))
    write("germany", "smoker_gender", ["smoker", "gender"],
          [(s, g, DE_SMOKER[g] if s == "yes" else 100.0 - DE_SMOKER[g]) for s in SMOKERS for g in GENDERS],
          distribution_meta("smoker prevalence within gender (percent), printed", conditional_on=["gender"]))
    write("germany", "state", ["state"], DE_STATES,
          distribution_meta("state shares (percent), printed; they sum to 100.057 and are normalized on read",
                            normalize=True))
    pop = {}
    for a in AGES:
        m = population_rate_male(a)
        pop[(a, "M")] = m
        pop[(a, "F")] = 0.62 * m
    write("germany", "population_rates", ["age", "gender"],
          [(a, g, pop[(a, g)]) for a in AGES for g in GENDERS],
          rate_meta("synthetic general-population rates (Makeham-logistic, female = 0.62 x male)"))
    insured = []
    for a in AGES:
        for g in GENDERS:
            sp = split(pop[(a, g)], DE_SMOKER[g] / 100.0)
            for s in SMOKERS:
                factor = 1.15 if s == "yes" else 0.75
                insured.append((a, g, s, factor * sp[s]))
    write("germany", "insured_rates", ["age", "gender", "smoker"], insured,
          rate_meta("synthetic insured rates: population rates split with hazard ratio 1.4, "
                    "then x1.15 for smokers and x0.75 for non-smokers"))


# ---------------------------------------------------------------- Italy

IT_PRINTED_M = [0.000532, 0.000526, 0.000518, 0.000508, 0.000492,
                0.000506, 0.000528, 0.000572, 0.000634, 0.000705]
IT_REGIONS = [
    ("Piemonte", 7.2), ("Valle d'Aosta", 0.2), ("Lombardia", 17.1),
    ("Trentino-Alto Adige", 1.8), ("Veneto", 8.2), ("Friuli-Venezia Giulia", 2.0),
    ("Liguria", 2.5), ("Emilia-Romagna", 7.5), ("Toscana", 6.2), ("Umbria", 1.5),
    ("Marche", 2.5), ("Lazio", 9.7), ("Abruzzo", 2.2), ("Molise", 0.5),
    ("Campania", 9.5), ("Puglia", 6.6), ("Basilicata", 0.9), ("Calabria", 3.1),
    ("Sicilia", 8.1), ("Sardegna", 2.7),
]


def italy():
    write("italy", "gender", ["gender"], [("F", 51.4), ("M", 48.6)],
          distribution_meta("synthetic gender shares (percent)"))
    cols = {"F": synthetic_age_column(1.0, 0.006), "M": synthetic_age_column(1.0, 0.008)}
    write("italy", "age_gender", ["age", "gender"],
          [(a, g, cols[g][a]) for a in AGES for g in GENDERS],
          distribution_meta("synthetic percent of each gender by age", conditional_on=["gender"],
                            normalize=True, tol=1e-4))
    write("italy", "smoker_gender", ["smoker", "gender"],
          [("yes", "F", 40.0), ("yes", "M", 49.7), ("no", "F", 60.0), ("no", "M", 50.3)],
          distribution_meta("smoker prevalence within gender (percent); male 49.7 back-solved from the "
                            "printed split of the age-20 rate, female synthetic", conditional_on=["gender"]))
    write("italy", "region", ["region"], IT_REGIONS,
          distribution_meta("synthetic regional shares (percent)"))
    m29 = IT_PRINTED_M[-1]
    x29 = m29 / (0.55 - m29)
    rows = []
    for a in AGES:
        if a <= 29:
            m = IT_PRINTED_M[a - 20]
        else:
            x = x29 * math.exp(0.095 * (a - 29))
            m = 0.55 * x / (1.0 + x)
        rows.append((a, "F", 0.6 * m))
        rows.append((a, "M", m))
    write("italy", "insured_rates", ["age", "gender"], rows,
          rate_meta("insured rates; male ages 20-29 printed, all other values synthetic "
                    "(logistic continuation, female = 0.6 x male)"))


# ---------------------------------------------------------------- Switzerland

CH_CANTONS = [
    ("ZH", 18.2), ("BE", 12.0), ("VD", 9.4), ("AG", 8.0), ("SG", 6.0), ("GE", 5.8),
    ("LU", 4.8), ("TI", 4.0), ("VS", 4.1), ("FR", 3.8), ("BL", 3.3), ("SO", 3.2),
    ("TG", 3.3), ("GR", 2.3), ("BS", 2.2), ("NE", 2.0), ("SZ", 1.8), ("ZG", 1.5),
    ("SH", 0.9), ("JU", 0.8), ("AR", 0.6), ("NW", 0.5), ("GL", 0.5), ("OW", 0.4),
    ("UR", 0.4), ("AI", 0.2),
]


def switzerland():
    total = sum(v for _, v in CH_CANTONS)
    cantons = [(c, v + (100.0 - total) if c == "ZH" else v) for c, v in CH_CANTONS]
    write("switzerland", "gender", ["gender"], [("F", 50.4), ("M", 49.6)],
          distribution_meta("synthetic gender shares (percent)"))
    cols = {"F": synthetic_age_column(1.0, 0.005), "M": synthetic_age_column(1.0, 0.007)}
    write("switzerland", "age_gender", ["age", "gender"],
          [(a, g, cols[g][a]) for a in AGES for g in GENDERS],
          distribution_meta("synthetic percent of each gender by age", conditional_on=["gender"],
                            normalize=True, tol=1e-4))
    write("switzerland", "smoker_gender", ["smoker", "gender"],
          [("yes", "F", 23.0), ("yes", "M", 31.0), ("no", "F", 77.0), ("no", "M", 69.0)],
          distribution_meta("approximate smoker prevalence within gender (percent)",
                            conditional_on=["gender"]))
    write("switzerland", "canton", ["canton"], cantons,
          distribution_meta("approximate cantonal shares (percent)"))
    rows = []
    for a in AGES:
        m = 0.9 * population_rate_male(a)
        rows.append((a, "F", 0.62 * m))
        rows.append((a, "M", m))
    write("switzerland", "population_rates", ["age", "gender"], rows,
          rate_meta("synthetic general-population rates (0.9 x the German synthetic rates)"))


if __name__ == "__main__":
    germany()
    italy()
    switzerland()
