import numpy as np
import pytest

from gpdtail.design import Exceedances, parse_schema
from gpdtail.likelihood import ParamVector
from gpdtail.simulate import parse_scenario

# Reference levels are the most frequent Belgian categories above age 100.
STUDY_SCHEMA = """
civ = widowed*,unmarried,married,divorced
edu = primary*,secondary,tertiary,unobserved
hht = collective*,single,couple,family,other
org = native*,west-europe,other
sex = female*,male
"""

# Published scale coefficients and shape (Belgium, Netherlands), ordered as STUDY_SCHEMA columns.
BE_COEF = {
    "intercept": 0.742, "civ:unmarried": 0.108, "civ:married": 0.098, "civ:divorced": 0.067,
    "edu:secondary": 0.021, "edu:tertiary": 0.068, "edu:unobserved": -0.007,
    "hht:single": 0.279, "hht:couple": 0.135, "hht:family": 0.181, "hht:other": 0.136,
    "org:west-europe": 0.164, "org:other": 0.905, "sex:male": -0.202,
}
BE_XI = -0.1340
NL_COEF = {
    "intercept": 0.653, "civ:unmarried": 0.049, "civ:married": 0.114, "civ:divorced": -0.042,
    "edu:secondary": -0.004, "edu:tertiary": -0.013, "edu:unobserved": -0.001,
    "hht:single": 0.243, "hht:couple": 0.071, "hht:family": 0.154, "hht:other": 0.381,
    "org:west-europe": 0.020, "org:other": 0.133, "sex:male": -0.155,
}
NL_XI = -0.1140

# Ten most frequent Belgian profiles (civ, edu, hht, org, sex) with BE and NL lifespans.
TOP10 = [
    (("widowed", "primary", "collective", "native", "female"), 115.67, 116.86),
    (("widowed", "secondary", "collective", "native", "female"), 116.00, 116.79),
    (("widowed", "primary", "single", "native", "female"), 120.70, 121.49),
    (("widowed", "unobserved", "collective", "native", "female"), 115.55, 116.83),
    (("widowed", "secondary", "single", "native", "female"), 121.14, 121.41),
    (("widowed", "unobserved", "single", "native", "female"), 120.55, 121.46),
    (("widowed", "primary", "family", "native", "female"), 118.77, 119.67),
    (("widowed", "tertiary", "collective", "native", "female"), 116.77, 116.65),
    (("widowed", "tertiary", "single", "native", "female"), 122.16, 121.22),
    (("widowed", "primary", "couple", "native", "female"), 117.94, 118.10),
]

# Lifespan increase from switching one characteristic of the baseline person.
CONTRASTS = {
    ("edu", "primary"): (0.093, 0.019), ("edu", "secondary"): (0.367, -0.039),
    ("civ", "divorced"): (0.878, -0.599), ("edu", "tertiary"): (0.996, -0.162),
    ("civ", "married"): (1.308, 1.733), ("civ", "unmarried"): (1.455, 0.717),
    ("hht", "couple"): (1.840, 1.067), ("hht", "other"): (1.853, 6.688),
    ("org", "west-europe"): (2.271, 0.291), ("hht", "family"): (2.518, 2.405),
    ("sex", "female"): (2.848, 2.422), ("hht", "single"): (4.082, 3.963),
    ("org", "other"): (18.711, 2.048),
}
BASELINE = {"civ": "widowed", "edu": "unobserved", "hht": "collective", "org": "native",
            "sex": "male"}

SMALL_SCENARIO = """
threshold = 100
n_individuals = 4000
seed = 3
xi = -0.13
beta.intercept = 0.74
beta.sex:male = -0.2
beta.hht:single = 0.28
schema.sex = female*,male
schema.hht = collective*,single
weights.sex = 0.7,0.3
weights.hht = 0.6,0.4
entry = uniform
max_entry = 3
censor_rate = 0.14
"""


@pytest.fixture(scope="session")
def study_schema():
    return parse_schema(STUDY_SCHEMA)


def published_theta(schema, coef, xi):
    return ParamVector([coef[c] for c in schema.columns], xi)


@pytest.fixture(scope="session")
def be_theta(study_schema):
    return published_theta(study_schema, BE_COEF, BE_XI)


@pytest.fixture(scope="session")
def nl_theta(study_schema):
    return published_theta(study_schema, NL_COEF, NL_XI)


@pytest.fixture
def small_cfg():
    return parse_scenario(SMALL_SCENARIO)


def synthetic_exceedances(n=500, seed=0, p=3, xi=-0.1, truncation=True, censoring=True):
    """Random covariate data drawn from the model itself (no dependence on simulate.py)."""
    rng = np.random.default_rng(seed)
    Z = np.column_stack([np.ones(n)] + [rng.random(n) < 0.4 for _ in range(p - 1)]).astype(float)
    beta = np.r_[0.7, rng.normal(0, 0.2, p - 1)]
    sigma = np.exp(Z @ beta)
    a = rng.uniform(0, 2, n) if truncation else np.zeros(n)
    u = 1.0 - rng.random(n)
    y = a * u ** (-xi) + sigma * (u ** (-xi) - 1) / xi
    if censoring:
        c = a + rng.exponential(5.0, n)
        event = y <= c
        y = np.where(event, y, c)
    else:
        event = np.ones(n, dtype=bool)
    keep = y > a
    return Exceedances(y[keep], a[keep], event[keep], Z[keep])


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
