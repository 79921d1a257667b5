"""Synthetic stand-in for a WS-DREAM directory, for smoke tests and demos.

Response times come from a low-rank log-normal model with country-level
effects on both sides, so location and history features carry signal.
The files use the same layout as the real dataset.
"""

from __future__ import annotations

import os

import numpy as np

from .dataset import MATRIX_FILE, SERVICES_FILE, USERS_FILE

USER_HEADER = ["[User ID]", "[IP Address]", "[Country]", "[IP No.]", "[AS]", "[Latitude]", "[Longitude]"]
SERVICE_HEADER = ["[Service ID]", "[WSDL Address]", "[Service Provider]", "[IP Address]", "[Country]",
                  "[IP No.]", "[AS]", "[Latitude]", "[Longitude]"]


def synthesize(n_users=60, n_services=200, n_countries=8, rank=3, missing_rate=0.05, noise=0.35, seed=0):
    """Return (matrix, user_rows, service_rows); the matrix uses -1 for missing entries."""
    rng = np.random.default_rng(seed)
    countries = [f"Country{i}" for i in range(n_countries)]
    pop = 1.0 / np.arange(1, n_countries + 1)
    pop /= pop.sum()
    u_country = rng.choice(n_countries, n_users, p=pop)
    s_country = rng.choice(n_countries, n_services, p=pop)
    # two providers per country
    u_as = u_country * 2 + rng.integers(0, 2, n_users)
    s_as = s_country * 2 + rng.integers(0, 2, n_services)

    country_u = rng.normal(0, 0.6, (n_countries, rank))
    country_s = rng.normal(0, 0.6, (n_countries, rank))
    as_bias = rng.normal(0, 0.3, 2 * n_countries)
    U = country_u[u_country] + rng.normal(0, 0.4, (n_users, rank))
    S = country_s[s_country] + rng.normal(0, 0.4, (n_services, rank))
    user_bias = rng.normal(0, 0.5, n_users) + as_bias[u_as]
    service_bias = rng.normal(0, 0.7, n_services) + as_bias[s_as]
    log_rt = -0.8 + user_bias[:, None] + service_bias[None, :] + 0.5 * U @ S.T
    log_rt += rng.normal(0, noise, log_rt.shape)
    rt = np.clip(np.round(np.exp(log_rt), 3), 0.001, 20.0)
    rt[rng.random(rt.shape) < missing_rate] = -1

    users = [[str(i), f"10.0.{i // 256}.{i % 256}", countries[u_country[i]], str(167772160 + i),
              f"AS{1000 + u_as[i]} Provider{u_as[i]}", "0", "0"] for i in range(n_users)]
    services = [[str(j), f"http://svc{j}.example/ws?wsdl", f"provider{j % 17}", f"10.1.{j // 256}.{j % 256}",
                 countries[s_country[j]], str(167837696 + j), f"AS{2000 + s_as[j]} Host{s_as[j]}", "0", "0"]
                for j in range(n_services)]
    return rt, users, services


def write_wsdream_dir(out_dir, matrix, users, services) -> None:
    os.makedirs(out_dir, exist_ok=True)
    np.savetxt(os.path.join(out_dir, MATRIX_FILE), matrix, fmt="%g", delimiter="\t")
    for name, header, rows in ((USERS_FILE, USER_HEADER, users), (SERVICES_FILE, SERVICE_HEADER, services)):
        with open(os.path.join(out_dir, name), "w") as fh:
            fh.write("\t".join(header) + "\n")
            fh.write("=" * 60 + "\n")
            for row in rows:
                fh.write("\t".join(row) + "\n")
