#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Ewaluacja w małej skali: dokładność odczytu z zaokrągleniem i bez, ablacja liczby
rund, pojemność, wierność obrazu szarego oraz proste statystyki zastępcze.

Statystyki zastępcze (dywergencja histogramów chrominancji, zachowanie L) NIE są
równoważne detektorom steganalizy i tak są opisywane w raportach.
"""

import copy
import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import torch  # noqa: E402
from scipy.spatial.distance import jensenshannon  # noqa: E402

from app.utils.errors import ConfigError, ShapeMismatch  # noqa: E402
from app.utils.flow_core import flow_forward  # noqa: E402
from app.utils.latent_mapping import capacity_bits, decode_latent  # noqa: E402
from app.utils.logger import setup_logger  # noqa: E402
from app.utils.payload_codec import EccConfig, bch_decode, bch_encode, parse_bool  # noqa: E402
from app.utils.pipeline import StegoModel, generate_containers, host_luminance  # noqa: E402
from app.utils.toy_data import generate_toy_images  # noqa: E402
from app.utils.training import emit_progress, train_stage2  # noqa: E402

logger = setup_logger()

GRAYSCALE_TOLERANCE = 2.0 / 255.0
PROXY_NOTE = ("Statystyki zastępcze (histogram chrominancji, zachowanie L) nie są równoważne "
              "detektorom steganalizy")


@dataclass
class ChannelReport:
    acc_ideal: float
    acc_rounded: float
    capacity_bpp: float
    grayscale_linf: float
    clip_fraction: float
    per_round: list = field(default_factory=list)
    acc_ideal_corrected: float = None
    acc_rounded_corrected: float = None
    ecc: dict = None
    margin_fraction: float = 0.0
    sign_margin_fraction: float = 0.0
    chroma_js_divergence: float = 0.0
    l_preserved: bool = True
    hosts: int = 0
    image_size: tuple = ()
    histograms: dict = field(default_factory=dict, repr=False)

    def to_dict(self):
        data = asdict(self)
        data["image_size"] = list(self.image_size)
        data["proxy_note"] = PROXY_NOTE
        return data


def revealing_accuracy(sent_bits, received_bits):
    """100 * (liczba zgodnych pozycji) / długość."""
    sent = np.asarray(sent_bits, dtype=np.uint8).ravel()
    received = np.asarray(received_bits, dtype=np.uint8).ravel()
    if sent.shape != received.shape:
        raise ShapeMismatch(f"Strumienie mają różne długości: {sent.size} i {received.size}")
    if sent.size == 0:
        return 100.0
    return 100.0 * float(np.count_nonzero(sent == received)) / sent.size


def _reveal_containers(flow, containers, features=None, chunk=64):
    """Odczyt wsadowy: zwraca (bity (B, 2HW), z' (B, 2, H, W))."""
    latents = []
    with torch.no_grad():
        for start in range(0, len(containers["bits"]), chunk):
            feats = None if features is None else features[start:start + chunk]
            z_rev, _ = flow_forward(containers["c"][start:start + chunk],
                                    containers["L"][start:start + chunk], flow, feats)
            latents.append(z_rev.detach().cpu().double().numpy())
    z_rev = np.concatenate(latents)
    return decode_latent(z_rev), z_rev


def _codeword_bits(count, capacity, ecc, rng):
    """Losowe wiadomości zakodowane BCH, dopełnione losowymi bitami do pełnej pojemności."""
    blocks = capacity // ecc.n
    messages = rng.integers(0, 2, size=(count, blocks * ecc.k), dtype=np.uint8)
    filler = rng.integers(0, 2, size=(count, capacity - blocks * ecc.n), dtype=np.uint8)
    codewords = np.stack([bch_encode(message, ecc.n, ecc.k) for message in messages])
    return messages, np.concatenate([codewords.reshape(count, -1), filler], axis=1), blocks


def _corrected_accuracy(messages, received, blocks, ecc):
    decoded = [bch_decode(row[:blocks * ecc.n], ecc.n, ecc.k, strict=False)[0] for row in received]
    return revealing_accuracy(messages, np.stack(decoded))


def chroma_histograms(c, bins):
    """Unormowane histogramy kanałów a i b na [-1, 1]."""
    c = np.asarray(c)
    edges = np.linspace(-1.0, 1.0, bins + 1)
    hists = []
    for channel in range(2):
        counts, _ = np.histogram(c[:, channel].ravel(), bins=edges)
        hists.append(counts / max(1, counts.sum()))
    return np.stack(hists)


def chroma_divergence(container_hist, reference_hist):
    """Średnia dywergencja Jensena-Shannona (podstawa 2) po kanałach a i b."""
    divergences = [jensenshannon(p, q, base=2) ** 2 for p, q in zip(container_hist, reference_hist)]
    return float(np.mean(np.nan_to_num(divergences)))


def evaluate_channel(model, dataset, seed=0, hosts=None, ecc=None, histogram_bins=32):
    """Mierzy kanał idealny i kanał z zapisem 8-bit na hostach ze zbioru.

    Args:
        model (StegoModel): model z ustawieniami
        dataset (LabDataset): hosty (ich chrominancja służy jako odniesienie histogramu)
        hosts (int): liczba hostów (domyślnie cały zbiór)
        ecc (EccConfig): kod do porównania surowej i poprawionej dokładności

    Returns:
        ChannelReport: per_round pozostaje puste
    """
    count = len(dataset) if hosts is None else min(hosts, len(dataset))
    if count == 0:
        raise ShapeMismatch("Brak hostów do ewaluacji")
    L = dataset.L[:count]
    features = None if dataset.features is None else dataset.features[:count]
    height, width = dataset.image_size
    capacity = capacity_bits(height, width)
    settings = model.settings
    common = dict(alpha=settings.alpha, seed=seed, gamut_mapping=settings.gamut_mapping, features=features)

    rng = np.random.default_rng(seed)
    messages = blocks = None
    if ecc is not None and ecc.enabled and capacity >= ecc.n:
        messages, bits, blocks = _codeword_bits(count, capacity, ecc, rng)
    else:
        bits = rng.integers(0, 2, size=(count, capacity), dtype=np.uint8)

    ideal = generate_containers(model.flow, L, quantize=False, bits=bits, **common)
    rounded = generate_containers(model.flow, L, quantize=True, bits=bits, **common)
    received_ideal, _ = _reveal_containers(model.flow, ideal, features)
    received_rounded, z_rev = _reveal_containers(model.flow, rounded, features)

    sent_sign = bits.reshape(z_rev.shape) > 0
    within_gap = np.abs(z_rev) < settings.alpha
    wrong_sign = (z_rev >= 0) != sent_sign
    grayscale_linf = float(torch.max(torch.abs(rounded["L"] - L.float())))
    container_hist = chroma_histograms(rounded["c"].numpy(), histogram_bins)
    reference_hist = chroma_histograms(dataset.c[:count].numpy(), histogram_bins)

    report = ChannelReport(
        acc_ideal=revealing_accuracy(bits, received_ideal),
        acc_rounded=revealing_accuracy(bits, received_rounded),
        capacity_bpp=capacity / (height * width),
        grayscale_linf=grayscale_linf,
        clip_fraction=rounded["clip_fraction"],
        margin_fraction=float(within_gap.mean()),
        sign_margin_fraction=float((within_gap & wrong_sign).mean()),
        chroma_js_divergence=chroma_divergence(container_hist, reference_hist),
        l_preserved=grayscale_linf < GRAYSCALE_TOLERANCE,
        hosts=count,
        image_size=(height, width),
        histograms={"containers": container_hist.tolist(), "reference": reference_hist.tolist()},
    )
    if messages is not None:
        report.ecc = ecc.to_dict()
        report.acc_ideal_corrected = _corrected_accuracy(messages, received_ideal, blocks, ecc)
        report.acc_rounded_corrected = _corrected_accuracy(messages, received_rounded, blocks, ecc)
    return report


def run_rounds_ablation(dataset, base_model, config, eval_dataset=None, hosts=None, seed=0,
                        checkpoint_path=None, ecc=None, histogram_bins=32):
    """Trening etapu 2 dla r = 0..R rund z pomiarem dokładności po każdej rundzie.

    base_model nie jest modyfikowany; trenowana jest jego kopia.

    Returns:
        ChannelReport: metryki modelu po ostatniej rundzie i per_round dla r = 0..R
    """
    eval_dataset = eval_dataset if eval_dataset is not None else dataset
    flow = copy.deepcopy(base_model.flow)
    per_round = []

    def measure(round_index, current_flow):
        report = evaluate_channel(StegoModel(current_flow, base_model.settings), eval_dataset,
                                  seed=seed, hosts=hosts, ecc=ecc, histogram_bins=histogram_bins)
        entry = {"round": round_index, "acc_ideal": report.acc_ideal, "acc_rounded": report.acc_rounded}
        if report.acc_rounded_corrected is not None:
            entry["acc_rounded_corrected"] = report.acc_rounded_corrected
        per_round.append(entry)
        logger.info(f"🔄 Ablacja, runda {round_index}: bez zaokrąglenia {report.acc_ideal:.2f}%, "
                    f"z zaokrągleniem {report.acc_rounded:.2f}%")
        emit_progress(stage="ablation", **entry)
        return report

    report = measure(0, flow)
    if config.rounds > 0:
        flow = train_stage2(flow, dataset, config, checkpoint_path=checkpoint_path,
                            checkpoint_extra=base_model.settings.to_extra(), on_round_end=measure)
        report = evaluate_channel(StegoModel(flow, base_model.settings), eval_dataset,
                                  seed=seed, hosts=hosts, ecc=ecc, histogram_bins=histogram_bins)
    report.per_round = per_round
    return report, StegoModel(flow, base_model.settings)


def run_capacity_sweep(model, sizes, hosts=4, seed=0):
    """Pełna pojemność losowych danych dla kilku rozmiarów obrazu (hosty proceduralne).

    Returns:
        list: wiersze {size, capacity_bits, bpp, acc_ideal, acc_rounded}
    """
    if model.flow.config.condition == "external":
        raise ConfigError("Przegląd pojemności wymaga warunkowania splotowego (model.condition = conv)",
                          key="model.condition")
    rows = []
    for size in sizes:
        images = generate_toy_images(hosts, size, seed=seed + size)
        L = np.stack([host_luminance(image) for image in images])
        common = dict(alpha=model.settings.alpha, seed=seed, gamut_mapping=model.settings.gamut_mapping)
        ideal = generate_containers(model.flow, L, quantize=False, **common)
        rounded = generate_containers(model.flow, L, quantize=True, **common)
        bits = capacity_bits(size, size)
        row = {
            "size": int(size),
            "capacity_bits": bits,
            "bpp": bits / (size * size),
            "acc_ideal": revealing_accuracy(ideal["bits"], _reveal_containers(model.flow, ideal)[0]),
            "acc_rounded": revealing_accuracy(rounded["bits"], _reveal_containers(model.flow, rounded)[0]),
        }
        logger.info(f"Pojemność {size}x{size}: {row['bpp']:.2f} bpp, "
                    f"{row['acc_ideal']:.2f}% / {row['acc_rounded']:.2f}%")
        rows.append(row)
    return rows


def _rounded_floats(value, digits=6):
    if isinstance(value, float):
        return round(value, digits)
    if isinstance(value, dict):
        return {key: _rounded_floats(item, digits) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_rounded_floats(item, digits) for item in value]
    return value


def format_rounds_table(report):
    """Tabela tekstowa: runda, dokładność bez zaokrąglenia, z zaokrągleniem."""
    header = f"{'Runda':>6} | {'Bez zaokrąglenia (%)':>21} | {'Z zaokrągleniem (%)':>20}"
    lines = [header, "-" * len(header)]
    for entry in report.per_round:
        lines.append(f"{entry['round']:>6} | {entry['acc_ideal']:>21.2f} | {entry['acc_rounded']:>20.2f}")
    return "\n".join(lines)


def format_report(report, sweep=None):
    """Czytelny raport z wyrównanymi kolumnami."""
    rows = [
        ("Dokładność bez zaokrąglenia (%)", f"{report.acc_ideal:.2f}"),
        ("Dokładność z zaokrągleniem (%)", f"{report.acc_rounded:.2f}"),
    ]
    if report.acc_rounded_corrected is not None:
        rows += [
            (f"Po korekcji BCH({report.ecc['n']}, {report.ecc['k']}), bez zaokr. (%)",
             f"{report.acc_ideal_corrected:.2f}"),
            (f"Po korekcji BCH({report.ecc['n']}, {report.ecc['k']}), z zaokr. (%)",
             f"{report.acc_rounded_corrected:.2f}"),
        ]
    rows += [
        ("Pojemność (bpp)", f"{report.capacity_bpp:.2f}"),
        ("Odchylenie L (max)", f"{report.grayscale_linf:.6f}"),
        ("Piksele poza gamutem", f"{report.clip_fraction:.4f}"),
        ("|z'| < alpha", f"{report.margin_fraction:.6f}"),
        ("|z'| < alpha i zły znak", f"{report.sign_margin_fraction:.6f}"),
        ("Dywergencja JS chrominancji", f"{report.chroma_js_divergence:.6f}"),
        ("L zachowane", "tak" if report.l_preserved else "nie"),
        ("Hosty", f"{report.hosts} ({report.image_size[0]}x{report.image_size[1]})"),
    ]
    width = max(len(name) for name, _ in rows)
    lines = [f"{name:<{width}}  {value}" for name, value in rows]
    if report.per_round:
        lines += ["", format_rounds_table(report)]
    if sweep:
        lines += ["", f"{'Rozmiar':>8} | {'bpp':>5} | {'Bez zaokr. (%)':>14} | {'Z zaokr. (%)':>12}"]
        for row in sweep:
            lines.append(f"{row['size']:>8} | {row['bpp']:>5.2f} | {row['acc_ideal']:>14.2f} | "
                         f"{row['acc_rounded']:>12.2f}")
    lines += ["", f"Uwaga: {PROXY_NOTE}."]
    return "\n".join(lines) + "\n"


def _plot_rounds(report, path):
    rounds = [entry["round"] for entry in report.per_round]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(rounds, [entry["acc_ideal"] for entry in report.per_round], marker="o", label="bez zaokrąglenia")
    ax.plot(rounds, [entry["acc_rounded"] for entry in report.per_round], marker="s", label="z zaokrągleniem")
    ax.set_xlabel("runda")
    ax.set_ylabel("dokładność odczytu (%)")
    ax.set_xticks(rounds)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)


def _plot_histograms(report, path):
    containers = np.asarray(report.histograms["containers"])
    reference = np.asarray(report.histograms["reference"])
    centers = np.linspace(-1.0, 1.0, containers.shape[1] + 1)
    centers = 0.5 * (centers[1:] + centers[:-1])
    fig, axes = plt.subplots(1, 2, figsize=(8, 3))
    for channel, (ax, name) in enumerate(zip(axes, ("a", "b"))):
        ax.step(centers, reference[channel], where="mid", label="obrazy kolorowe")
        ax.step(centers, containers[channel], where="mid", label="kontenery")
        ax.set_title(f"kanał {name}")
    axes[0].legend()
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)


def write_report(run_dir, report, sweep=None, metadata=None):
    """Zapisuje runs/<nazwa>/{report.json, report.txt, plots/}.

    report.json jest deterministyczny: posortowane klucze, liczby zaokrąglone do 6 miejsc.
    """
    run_dir = Path(run_dir)
    plots_dir = run_dir / "plots"
    plots_dir.mkdir(parents=True, exist_ok=True)

    data = report.to_dict()
    data["capacity_sweep"] = sweep or []
    data["metadata"] = metadata or {}
    json_path = run_dir / "report.json"
    json_path.write_text(json.dumps(_rounded_floats(data), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    (run_dir / "report.txt").write_text(format_report(report, sweep), encoding="utf-8")

    if report.per_round:
        _plot_rounds(report, plots_dir / "accuracy_vs_round.png")
    if report.histograms:
        _plot_histograms(report, plots_dir / "chroma_histograms.png")
    logger.info(f"✅ Raport zapisany w {run_dir}")
    return json_path


def ecc_for_comparison(settings_ecc, eval_section):
    """Kod użyty do porównania surowej i poprawionej dokładności (None, gdy wyłączone)."""
    if settings_ecc is not None and settings_ecc.enabled:
        return settings_ecc
    if parse_bool(eval_section.get("ecc_compare", True)):
        base = settings_ecc or EccConfig()
        return EccConfig(enabled=True, n=base.n, k=base.k)
    return None
