"""Minimal encoder-decoder with pluggable attention.

Encoder: token embedding followed by a single-layer bidirectional GRU; the
concatenated states are the attention memory.  Decoder: one GRU cell fed
with the previous frame and previous context; its new state is the
attention query (the "previous decoder state" of the current output step).
An affine head over [state, context] predicts the next frame and a stop
logit.

Mechanisms:
    lsa    softmax over additive energies with location features
    gmm    Graves mixture with forward-only centres (rows renormalised)
    ma     monotonic attention, expected alignment via the recursive form
    fa     forward attention; fa_ta adds a transition agent
    sma    stepwise monotonic attention

SMA spends the first output frame on the initial focus (entry 0) and
applies stay/move decisions from the second frame on, matching
:func:`stepmono.hard_decoder.decode_hard`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import kernels as K
from . import autograd as ag
from .config import ModelConfig, ToyTaskSpec
from .data import ToyPair

MONOTONIC = ("ma", "sma")


def _uniform(rng, shape, scale):
    return rng.uniform(-scale, scale, shape)


def init_params(config: ModelConfig, task: ToyTaskSpec) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(config.seed)
    E, He, Hd, A = config.embed_dim, config.encoder_width, config.decoder_width, config.attention_dim
    D = 2 * He
    F = task.frame_dim
    Kc = config.gmm_components
    p: dict[str, np.ndarray] = {"embedding": rng.normal(0, 1, (task.n_tokens, E)) * 0.5}
    for direction in ("enc_fw", "enc_bw"):
        s = 1 / np.sqrt(He)
        p[f"{direction}_Wx"] = _uniform(rng, (E, 3 * He), s)
        p[f"{direction}_Wh"] = _uniform(rng, (He, 3 * He), s)
        p[f"{direction}_bx"] = np.zeros(3 * He)
        p[f"{direction}_bh"] = np.zeros(3 * He)
    s = 1 / np.sqrt(Hd)
    p["dec_Wx"] = _uniform(rng, (F + D, 3 * Hd), s)
    p["dec_Wh"] = _uniform(rng, (Hd, 3 * Hd), s)
    p["dec_bx"] = np.zeros(3 * Hd)
    p["dec_bh"] = np.zeros(3 * Hd)

    energy = K.EnergyParams.init(rng, Hd, D, A, location_dim=config.location_filters,
                                 bias=config.score_bias if config.mechanism in MONOTONIC else 0.0)
    p["att_Wq"] = energy.query_weight
    p["att_Wk"] = energy.key_weight
    p["att_hb"] = energy.hidden_bias
    p["att_v"] = energy.direction
    p["att_log_gain"] = np.array(np.log(energy.gain))
    p["att_bias"] = np.array(energy.bias)
    p["loc_filters"] = _uniform(rng, (config.location_filters, config.location_width), 0.5)
    p["loc_W"] = energy.location_weight

    p["gmm_W"] = _uniform(rng, (Hd, 3 * Kc), 0.01)
    # start with slow centre drift (exp(-1) per frame) and moderately sharp components
    p["gmm_b"] = np.concatenate([np.zeros(Kc), np.full(Kc, -1.0), np.zeros(Kc)])
    p["ta_W"] = _uniform(rng, (Hd + D, 1), 1 / np.sqrt(Hd + D))
    p["ta_b"] = np.zeros(1)

    p["out_W"] = _uniform(rng, (Hd + D, F + 1), 1 / np.sqrt(Hd + D))
    p["out_b"] = np.zeros(F + 1)
    return p


@dataclass
class Batch:
    tokens: np.ndarray  # (B, n)
    frames: np.ndarray  # (B, T, F)
    stop: np.ndarray  # (B, T)
    mask: np.ndarray  # (B, T)

    @classmethod
    def from_pairs(cls, pairs: list[ToyPair]) -> "Batch":
        n = {len(p.tokens) for p in pairs}
        if len(n) != 1:
            raise ValueError("a batch must share one input length")
        T = max(p.n_frames for p in pairs)
        F = pairs[0].frames.shape[1]
        B = len(pairs)
        frames = np.zeros((B, T, F))
        stop = np.zeros((B, T))
        mask = np.zeros((B, T))
        for b, p in enumerate(pairs):
            frames[b, :p.n_frames] = p.frames
            stop[b, :p.n_frames] = p.stop
            mask[b, :p.n_frames] = 1.0
        return cls(np.stack([p.tokens for p in pairs]), frames, stop, mask)


@dataclass
class DecoderState:
    h: object
    context: object
    alignment: object
    centers: object = None
    step: int = 0


@dataclass
class ForwardResult:
    loss: float
    alignments: np.ndarray  # (B, T, n)
    tape: ag.Tape
    loss_var: ag.Var
    params: dict[str, ag.Var]
    fallbacks: int = 0
    extras: dict = field(default_factory=dict)


class ToyModel:
    def __init__(self, config: ModelConfig, task: ToyTaskSpec,
                 params: dict[str, np.ndarray] | None = None):
        self.config = config
        self.task = task
        self.params = params if params is not None else init_params(config, task)

    @property
    def mechanism(self) -> str:
        return self.config.mechanism

    def param_count(self) -> int:
        return int(sum(v.size for v in self.params.values()))

    def used_params(self) -> set[str]:
        used = {k for k in self.params if k.startswith(("embedding", "enc_", "dec_", "out_"))}
        mech = self.mechanism
        if mech == "gmm":
            return used | {"gmm_W", "gmm_b"}
        used |= {"att_Wq", "att_Wk", "att_hb", "att_v", "att_log_gain"}
        if mech in MONOTONIC:
            used.add("att_bias")
        if mech == "lsa":
            used |= {"loc_filters", "loc_W"}
        if mech == "fa_ta":
            used |= {"ta_W", "ta_b"}
        return used

    # -- graph construction ------------------------------------------------------

    def encode(self, tape: ag.Tape, P: dict, tokens: np.ndarray) -> ag.Var:
        emb = ag.take_rows(tape, P["embedding"], tokens)
        B, n = tokens.shape
        He = self.config.encoder_width
        outs = {}
        for direction, order in (("enc_fw", range(n)), ("enc_bw", range(n - 1, -1, -1))):
            h = np.zeros((B, He))
            states = [None] * n
            for j in order:
                h = ag.gru_cell(tape, ag.select(tape, emb, j, axis=1), h, P[f"{direction}_Wx"],
                                P[f"{direction}_Wh"], P[f"{direction}_bx"], P[f"{direction}_bh"])
                states[j] = h
            outs[direction] = ag.stack(tape, states, axis=1)
        return ag.concat(tape, [outs["enc_fw"], outs["enc_bw"]])

    def initial_state(self, B: int, n: int) -> DecoderState:
        focus = np.zeros((B, n))
        focus[:, 0] = 1.0
        centers = np.zeros((B, self.config.gmm_components)) if self.mechanism == "gmm" else None
        return DecoderState(np.zeros((B, self.config.decoder_width)),
                            np.zeros((B, 2 * self.config.encoder_width)), focus, centers)

    def advance(self, tape, P, state: DecoderState, prev_frame) -> ag.Var:
        inp = ag.concat(tape, [prev_frame, state.context])
        return ag.gru_cell(tape, inp, state.h, P["dec_Wx"], P["dec_Wh"], P["dec_bx"], P["dec_bh"])

    def energies(self, tape, P, h, memory, location=None, training=False, rng=None) -> ag.Var:
        noise = self.config.noise_scale if self.mechanism in MONOTONIC else 0.0
        gain = ag.exp(tape, P["att_log_gain"])
        # softmax is shift-invariant, so only the sigmoid mechanisms see the score bias
        bias = P["att_bias"] if self.mechanism in MONOTONIC else np.zeros(())
        return ag.energy(tape, h, memory, P["att_Wq"], P["att_Wk"], P["att_hb"], P["att_v"],
                         gain, bias, noise, location=location,
                         Wl=P["loc_W"] if location is not None else None,
                         training=training, rng=rng)

    def probabilities(self, tape, P, h, memory, training=False, rng=None) -> ag.Var:
        return ag.selection_probabilities(tape, self.energies(tape, P, h, memory, None, training, rng))

    def attend(self, tape, P, state: DecoderState, h, memory, training=False, rng=None):
        """Soft alignment for the current step; returns (alignment, centres, fallback)."""
        mech = self.mechanism
        n = value_shape(memory)[-2]
        if mech == "lsa":
            loc = ag.location_features(tape, state.alignment, P["loc_filters"])
            return ag.softmax(tape, self.energies(tape, P, h, memory, loc)), None, None
        if mech == "gmm":
            raw = ag.linear(tape, h, P["gmm_W"], P["gmm_b"])
            row, centers = ag.gmm_attention(tape, state.centers, raw, n, normalize=True)
            return row, centers, None
        if mech == "ma":
            p = self.probabilities(tape, P, h, memory, training, rng)
            return ag.ma_alignment(tape, state.alignment, p), None, None
        if mech == "sma":
            if state.step == 0:
                return state.alignment, None, None
            p = self.probabilities(tape, P, h, memory, training, rng)
            return ag.sma_alignment(tape, state.alignment, p, self.config.edge_policy), None, None
        y = ag.softmax(tape, self.energies(tape, P, h, memory))
        u = None
        if mech == "fa_ta":
            u = ag.sigmoid(tape, ag.linear(tape, ag.concat(tape, [h, state.context]),
                                           P["ta_W"], P["ta_b"]))
        row, fallback = ag.forward_attention(tape, state.alignment, y, u)
        return row, None, fallback

    def emit(self, tape, P, h, context) -> ag.Var:
        return ag.linear(tape, ag.concat(tape, [h, context]), P["out_W"], P["out_b"])

    # -- training objective --------------------------------------------------------

    def forward_teacher_forced(self, batch: Batch | list[ToyPair], training: bool = True,
                               rng: np.random.Generator | None = None) -> ForwardResult:
        """Loss = frame MSE + stop-flag BCE over unmasked frames, with the
        expected (soft) context at every step."""
        if not isinstance(batch, Batch):
            batch = Batch.from_pairs(batch)
        if training and rng is None and self.mechanism in MONOTONIC and self.config.noise_scale > 0:
            raise K.RejectedInput("noisy monotonic training needs a seeded rng")
        tape = ag.Tape()
        P = {k: tape.leaf(v) for k, v in self.params.items()}
        B, T, F = batch.frames.shape
        n = batch.tokens.shape[1]

        memory = self.encode(tape, P, batch.tokens)
        state = self.initial_state(B, n)
        outs, rows = [], []
        fallbacks = 0
        for i in range(T):
            prev_frame = np.zeros((B, F)) if i == 0 else batch.frames[:, i - 1]
            h = self.advance(tape, P, state, prev_frame)
            alignment, centers, fb = self.attend(tape, P, state, h, memory, training, rng)
            if fb is not None:
                fallbacks += int(np.sum(fb & (batch.mask[:, i] > 0)))
            ctx = ag.context(tape, alignment, memory)
            outs.append(self.emit(tape, P, h, ctx))
            rows.append(ag.value(alignment))
            state = DecoderState(h, ctx, alignment, centers, i + 1)

        out = ag.stack(tape, outs, axis=1)
        pred = ag.select(tape, out, slice(0, F))
        stop_logit = ag.select(tape, out, F)
        loss = ag.add(tape, ag.masked_mse(tape, pred, batch.frames, batch.mask),
                      ag.masked_bce_logits(tape, stop_logit, batch.stop, batch.mask))
        loss_value = float(loss.value)
        if not np.isfinite(loss_value):
            raise FloatingPointError(f"non-finite loss {loss_value}")
        return ForwardResult(loss_value, np.stack(rows, axis=1), tape, loss, P, fallbacks)

    def backward(self, result: ForwardResult) -> dict[str, np.ndarray]:
        result.tape.backward(result.loss_var)
        return {k: (v.grad if v.grad is not None else np.zeros_like(v.value)).reshape(v.value.shape)
                for k, v in result.params.items()}

    def loss_and_grads(self, batch, training=True, rng=None):
        res = self.forward_teacher_forced(batch, training, rng)
        return res.loss, self.backward(res), res


def value_shape(x):
    return np.shape(ag.value(x))
