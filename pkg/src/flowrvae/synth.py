"""Seeded synthetic traffic: raw Zeek logs with an injected IRC bot, and sequence-level toys.

The raw generator writes three normal host behaviours (web browsing, DNS
chatter, mail/ssh sessions) plus periodic bots that beacon to an IRC
command server and sweep port 445. Bots also raise ``irc_line_too_short``
weird events so labels can be derived the same way as for real captures.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .ingest import ZEEK_CONN_FIELDS, ZEEK_WEIRD_FIELDS

EPOCH0 = 1313658000.0
CNC_IP = "147.32.96.69"


@dataclass(frozen=True)
class FixtureConfig:
    n_windows: int = 240
    window_s: float = 60.0
    hosts_per_pattern: int = 8
    n_bots: int = 6
    p_active: float = 0.9
    seed: int = 0


def _conn_line(ts, uid, src, sport, dst, dport, proto, service, duration, ob, rb, state, op, rp):
    vals = {
        "ts": f"{ts:.6f}", "uid": uid, "id.orig_h": src, "id.orig_p": str(sport),
        "id.resp_h": dst, "id.resp_p": str(dport), "proto": proto, "service": service,
        "duration": f"{duration:.6f}", "orig_bytes": str(ob), "resp_bytes": str(rb),
        "conn_state": state, "local_orig": "-", "local_resp": "-", "missed_bytes": "0",
        "history": "-", "orig_pkts": str(op), "orig_ip_bytes": str(ob + 40 * op),
        "resp_pkts": str(rp), "resp_ip_bytes": str(rb + 40 * rp), "tunnel_parents": "(empty)",
    }
    return "\t".join(vals[f] for f in ZEEK_CONN_FIELDS)


def _header(path: str, fields) -> list[str]:
    return ["#separator \\x09", "#set_separator\t,", "#empty_field\t(empty)",
            "#unset_field\t-", f"#path\t{path}", "#fields\t" + "\t".join(fields)]


def _browser(rng, t0, w):
    out = []
    for _ in range(rng.poisson(8) + 1):
        https = rng.random() < 0.6
        out.append(dict(t=t0 + rng.uniform(0, w), dst=f"93.184.{rng.integers(0, 4)}.{rng.integers(1, 30)}",
                        dport=443 if https else 80, proto="tcp", service="ssl" if https else "http",
                        dur=rng.exponential(2.0), ob=int(rng.lognormal(6, 0.5)),
                        rb=int(rng.lognormal(9, 0.7)), state="SF",
                        op=int(rng.integers(4, 12)), rp=int(rng.integers(6, 30))))
    return out


def _dns(rng, t0, w):
    out = []
    for _ in range(rng.poisson(5) + 1):
        out.append(dict(t=t0 + rng.uniform(0, w), dst="8.8.8.8", dport=53, proto="udp",
                        service="dns", dur=rng.exponential(0.05), ob=int(rng.integers(30, 70)),
                        rb=int(rng.integers(60, 300)), state="SF", op=1, rp=1))
    return out


def _mail_ssh(rng, t0, w):
    out = []
    for _ in range(rng.poisson(2) + 1):
        ssh = rng.random() < 0.5
        out.append(dict(t=t0 + rng.uniform(0, w), dst=f"147.32.80.{rng.integers(1, 6)}",
                        dport=22 if ssh else 25, proto="tcp", service="ssh" if ssh else "smtp",
                        dur=rng.exponential(20.0), ob=int(rng.lognormal(8, 0.6)),
                        rb=int(rng.lognormal(7, 0.6)), state="SF",
                        op=int(rng.integers(10, 60)), rp=int(rng.integers(10, 60))))
    return out


def _bot(rng, t0, w, phase):
    out = []
    period = 20.0
    t = t0 + (phase % period)
    while t < t0 + w:  # beacon to the command server
        out.append(dict(t=t, dst=CNC_IP, dport=6667, proto="tcp", service="irc",
                        dur=rng.uniform(0.2, 0.6), ob=int(rng.integers(60, 120)),
                        rb=int(rng.integers(40, 90)), state="SF", op=3, rp=2))
        t += period
    for _ in range(int(rng.integers(10, 20))):  # sweep
        out.append(dict(t=t0 + rng.uniform(0, w),
                        dst=f"{rng.integers(1, 224)}.{rng.integers(0, 256)}.{rng.integers(0, 256)}.{rng.integers(1, 255)}",
                        dport=445, proto="tcp", service="-", dur=0.0, ob=0, rb=0,
                        state="S0" if rng.random() < 0.7 else "REJ", op=1, rp=0))
    return out


_PATTERNS = (("10.0.1", _browser), ("10.0.2", _dns), ("10.0.3", _mail_ssh))


def generate_fixture(cfg: FixtureConfig = FixtureConfig()) -> tuple[list[str], list[str], list[str]]:
    """(conn.log lines, weird.log lines, bot IPs), timestamps sorted."""
    rng = np.random.default_rng(cfg.seed)
    hosts = [(f"{net}.{i + 10}", fn) for net, fn in _PATTERNS for i in range(cfg.hosts_per_pattern)]
    bots = [f"10.0.9.{i + 10}" for i in range(cfg.n_bots)]
    phases = rng.uniform(0, 20.0, size=len(bots))
    conns, weirds = [], []
    w = cfg.window_s
    for k in range(cfg.n_windows):
        t0 = EPOCH0 + k * w
        for ip, fn in hosts:
            if rng.random() < cfg.p_active:
                conns.extend((ip, f) for f in fn(rng, t0, w))
        for ip, ph in zip(bots, phases):
            flows = _bot(rng, t0, w, ph)
            conns.extend((ip, f) for f in flows)
            irc = [f for f in flows if f["service"] == "irc"]
            if irc and rng.random() < 0.5:
                weirds.append((irc[0]["t"] + 0.01, ip))
    conns.sort(key=lambda c: (c[1]["t"], c[0]))
    conn_lines = _header("conn", ZEEK_CONN_FIELDS)
    for n, (ip, f) in enumerate(conns):
        conn_lines.append(_conn_line(f["t"], f"C{n:07d}", ip, int(rng.integers(1024, 65535)),
                                     f["dst"], f["dport"], f["proto"], f["service"], f["dur"],
                                     f["ob"], f["rb"], f["state"], f["op"], f["rp"]))
    weird_lines = _header("weird", ZEEK_WEIRD_FIELDS)
    for n, (t, ip) in enumerate(sorted(weirds)):
        weird_lines.append("\t".join([f"{t:.6f}", f"W{n:07d}", ip, "40000", CNC_IP, "6667",
                                      "irc_line_too_short", "-", "F", "zeek"]))
    return conn_lines, weird_lines, bots


def write_fixture(out_dir, cfg: FixtureConfig = FixtureConfig()) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    conn, weird, _ = generate_fixture(cfg)
    conn_path, weird_path = out / "conn.log", out / "weird.log"
    conn_path.write_text("\n".join(conn) + "\n")
    weird_path.write_text("\n".join(weird) + "\n")
    return conn_path, weird_path


# ---------------------------------------------------------------- sequence-level toys

def cyclic_prototypes(n_features: int, period: int, rng) -> np.ndarray:
    """``period`` random prototype vectors with entries 0.1 or 0.9."""
    protos = rng.random((period, n_features)) < 0.5
    return np.where(protos, 0.9, 0.1)


def cyclic_sequences(protos: np.ndarray, n: int, length: int, rng, noise: float = 0.03,
                     shuffled: bool = False) -> list[np.ndarray]:
    """Normal: prototypes in cyclic order from a random phase. Anomalous: same rows, order permuted.

    Each timestep of an anomalous sequence is still one of the prototypes, so
    per-timestep marginals match the normal data; only the order differs.
    """
    period = len(protos)
    out = []
    for _ in range(n):
        idx = (rng.integers(period) + np.arange(length)) % period
        if shuffled:
            idx = rng.permutation(idx)
        x = protos[idx] + noise * rng.standard_normal((length, protos.shape[1]))
        out.append(np.clip(x, 0.0, 1.0))
    return out


@dataclass
class TwoDomainData:
    source_normal: list[np.ndarray]
    source_anomalous: list[np.ndarray]
    target_normal: list[np.ndarray]
    target_unlabelled: list[np.ndarray]
    test_x: list[np.ndarray]
    test_y: np.ndarray


def two_domain_task(seed: int, n_features: int = 8, period: int = 4, length: int = 12,
                    n_source: int = 200, target_ratio: float = 0.1, n_test: int = 100,
                    contamination: float = 0.1, shift: float = 0.25) -> TwoDomainData:
    """Source and target share the order-shuffling anomaly; target marginals are shifted.

    Target prototypes are the source ones moved by ``shift`` toward the
    centre on a random half of the features, and the target normal set is
    ``target_ratio`` times the source normal set.
    """
    rng = np.random.default_rng(seed)
    ps = cyclic_prototypes(n_features, period, rng)
    moved = rng.random(n_features) < 0.5
    pt = ps.copy()
    pt[:, moved] = np.where(pt[:, moved] > 0.5, pt[:, moved] - shift, pt[:, moved] + shift)
    n_tgt = max(2, int(round(n_source * target_ratio)))
    src_n = cyclic_sequences(ps, n_source, length, rng)
    src_a = cyclic_sequences(ps, max(2, n_source // 10), length, rng, shuffled=True)
    tgt_n = cyclic_sequences(pt, n_tgt, length, rng)
    n_bad = max(1, int(round(n_tgt * contamination)))
    tgt_u = tgt_n[: n_tgt - n_bad] + cyclic_sequences(pt, n_bad, length, rng, shuffled=True)
    test_n = cyclic_sequences(pt, n_test, length, rng)
    test_a = cyclic_sequences(pt, n_test, length, rng, shuffled=True)
    y = np.r_[np.zeros(n_test, bool), np.ones(n_test, bool)]
    return TwoDomainData(src_n, src_a, tgt_n, tgt_u, test_n + test_a, y)
