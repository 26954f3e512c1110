"""The key-generation protocols over an in-process authenticated public channel.

Every model is split into an encoder side working on polarized blocks and
decoder sides working on side-information blocks. Both are batched over a
leading realization axis so the same code serves single runs, exhaustive
sweeps and exact enumeration. The ``*_run`` functions wrap them for one
realization and return a ``ProtocolReport``.

Randomness is consumed in a fixed order: source blocks, then seeds/pads and
R_1, then the stochastic encoder's private draws block by block.
"""

import logging
from dataclasses import dataclass, field
from typing import Literal, Optional, Sequence

import numpy as np
from pydantic import BaseModel, Field

from errors import InfeasibleConfiguration, SpecValidationError, StructuralError
from polar_core import IndexSet, polar_transform_array
from polarization import IndexSetBundle, symbol_model
from sc_codec import FrozenMap, SymbolModel, sc_decode_batch, sc_stochastic_encode_batch
from sources import BroadcastStar, MarkovTree, TestChannel, joint_pmf, sample_array
from utils import bits_to_hex, hex_to_bits

logger = logging.getLogger(__name__)

MessageLabel = Literal["F", "F'", "F^pad", "R1", "Fbar", "M"]


class Message(BaseModel):
    block: int
    sender: int
    label: MessageLabel
    length: int
    payload: str

    def bits(self) -> np.ndarray:
        return hex_to_bits(self.payload, self.length)


class Transcript(BaseModel):
    """Ordered public messages of one protocol run"""

    messages: list[Message] = Field(default_factory=list)

    @property
    def total_bits(self) -> int:
        return sum(m.length for m in self.messages)

    def payload_bits(self) -> np.ndarray:
        if not self.messages:
            return np.zeros(0, dtype=np.uint8)
        return np.concatenate([m.bits() for m in self.messages])

    def find(self, block: int, label: str, sender: Optional[int] = None) -> Message:
        for message in self.messages:
            if message.block == block and message.label == label and sender in (None, message.sender):
                return message
        raise StructuralError(f"no {label} message in block {block}")


class KeyMaterial(BaseModel):
    """Per-block key, seed and pad bookkeeping of the encoding terminal"""

    k: int
    keys: list[str] = Field(default_factory=list)
    key_lengths: list[int] = Field(default_factory=list)
    seeds_next: list[str] = Field(default_factory=list)
    kbar: list[str] = Field(default_factory=list)
    consumed_seeds: list[str] = Field(default_factory=list)
    pads: list[str] = Field(default_factory=list)


class BlockDiagnostic(BaseModel):
    terminal: int
    block: int
    decode_ok: bool


class ProtocolReport(BaseModel):
    model: str
    n_total: int
    k: int
    encoder: int
    keys: dict[int, str]
    key_length: int
    agreement: bool
    transcript: Transcript
    material: KeyMaterial
    key_rate: float
    seed_rate: float
    public_rate: float
    seed_bits: int = 0
    reclaimable_bits: int = 0
    reclaimable_key_rate: Optional[float] = None
    privacy_leakage_bound: Optional[int] = None
    pad_bits: Optional[int] = None
    eve_blocks: list[str] = Field(default_factory=list)
    diagnostics: list[BlockDiagnostic] = Field(default_factory=list)
    warnings: list[str] = Field(default_factory=list)

    def key_bits(self, terminal: Optional[int] = None) -> np.ndarray:
        return hex_to_bits(self.keys[terminal or self.encoder], self.key_length)

    @property
    def all_decodes_ok(self) -> bool:
        return all(d.decode_ok for d in self.diagnostics)


@dataclass
class Broadcast:
    """Batched public message: bits has shape (B, length)"""

    block: int
    sender: int
    label: str
    bits: np.ndarray


@dataclass
class EncoderOutput:
    keys: list[np.ndarray]
    messages: list[Broadcast]
    seeds_next: list[np.ndarray] = field(default_factory=list)
    kbar: list[np.ndarray] = field(default_factory=list)

    def key_bits(self) -> np.ndarray:
        return np.concatenate(self.keys, axis=-1)

    def public_bits(self) -> np.ndarray:
        batch = self.keys[0].shape[0]
        if not self.messages:
            return np.zeros((batch, 0), dtype=np.uint8)
        return np.concatenate([m.bits for m in self.messages], axis=-1)

    def find(self, block: int, label: str, sender: Optional[int] = None) -> np.ndarray:
        for message in self.messages:
            if message.block == block and message.label == label and sender in (None, message.sender):
                return message.bits
        raise StructuralError(f"no {label} message in block {block}")


@dataclass
class DecoderOutput:
    keys: list[np.ndarray]
    ok: np.ndarray


def _take(blocks: np.ndarray, s: IndexSet) -> np.ndarray:
    return blocks[..., s.zero_based]


def _put(values: np.ndarray, s: IndexSet, bits: np.ndarray) -> None:
    values[..., s.zero_based] = bits


def _expect(sets: IndexSetBundle, *models: str) -> None:
    if sets.model not in models:
        raise SpecValidationError(f"index sets were built for {sets.model}, not {' or '.join(models)}")


def _sample_source(spec, n_len: int, k: int, rng: np.random.Generator, blocks: Optional[np.ndarray]) -> np.ndarray:
    """Source bits of shape (k, axes, N), sampled or validated"""
    axes = spec.terminals + int(spec.eve)
    if blocks is None:
        return sample_array(joint_pmf(spec), n_len, rng, k)
    blocks = np.asarray(blocks, dtype=np.uint8)
    if blocks.shape != (k, axes, n_len):
        raise StructuralError(f"source blocks of shape {blocks.shape}, expected {(k, axes, n_len)}")
    return blocks


def _provision(bits: Optional[Sequence[int]], shape: tuple[int, ...], rng: np.random.Generator, name: str) -> np.ndarray:
    """Use the caller's seed or draw a uniform one"""
    if bits is None:
        return rng.integers(0, 2, shape, dtype=np.uint8)
    arr = np.asarray(bits, dtype=np.uint8).reshape(-1)
    if arr.size != int(np.prod(shape)):
        raise StructuralError(f"{name} of {arr.size} bits, expected {int(np.prod(shape))}")
    return arr.reshape(shape)


def chained_encode(
    blocks: np.ndarray,
    seed0: np.ndarray,
    sets: IndexSetBundle,
    a_name: str,
    r1: Optional[np.ndarray] = None,
    sender: int = 1,
) -> EncoderOutput:
    """Key/seed/pad split of chained blocks (B, k, N).

    Block i publishes [U[F], U[F'] xor seed_{i-1}], keeps U[K] as key and
    U[A] as the seed for block i+1. R_1 is published once in block 1.
    """
    f_set, pad_set, a_set, k_set = sets["F"], sets["F'"], sets[a_name], sets["K"]
    if len(a_set) != len(pad_set):
        raise InfeasibleConfiguration(
            f"{a_name} has {len(a_set)} indices but {len(pad_set)} pad positions need a seed",
            needed=len(pad_set),
            available=len(a_set),
        )
    out = EncoderOutput(keys=[], messages=[])
    if r1 is not None:
        out.messages.append(Broadcast(1, sender, "R1", r1))
    seed = seed0
    for i in range(blocks.shape[1]):
        block = blocks[:, i]
        out.messages.append(Broadcast(i + 1, sender, "F", _take(block, f_set)))
        out.messages.append(Broadcast(i + 1, sender, "F^pad", _take(block, pad_set) ^ seed))
        out.keys.append(_take(block, k_set))
        seed = _take(block, a_set)
        out.seeds_next.append(seed)
    return out


def chained_frozen(
    f_bits: np.ndarray,
    pad_bits: np.ndarray,
    seed: np.ndarray,
    sets: IndexSetBundle,
    frozen_name: str,
    shared_name: Optional[str] = None,
    r1: Optional[np.ndarray] = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Decoder's (mask, values) for one chained block, values shaped (B, N)"""
    mask = sets[frozen_name].mask()
    values = np.zeros(f_bits.shape[:-1] + (sets.n_total,), dtype=np.uint8)
    if shared_name is not None:
        mask = mask | sets[shared_name].mask()
        _put(values, sets[shared_name], r1)
    _put(values, sets["F"], f_bits)
    _put(values, sets["F'"], pad_bits ^ seed)
    return mask, values


def model1_bob_frozen(f_bits: Sequence[int], pad_bits: Sequence[int], seed: Sequence[int], sets: IndexSetBundle) -> FrozenMap:
    """Bob's frozen word for one block from M_i = [F_i, F'_i xor seed] and his seed"""
    mask, values = chained_frozen(
        np.asarray(f_bits, dtype=np.uint8),
        np.asarray(pad_bits, dtype=np.uint8),
        np.asarray(seed, dtype=np.uint8),
        sets,
        "H_X|Y",
    )
    frozen = sets["H_X|Y"]
    return FrozenMap.from_values(frozen, values[frozen.zero_based])


def chained_decode(
    side: np.ndarray,
    encoded: EncoderOutput,
    seed0: np.ndarray,
    sets: IndexSetBundle,
    model: SymbolModel,
    frozen_name: str,
    a_name: str,
    shared_name: Optional[str] = None,
    truth: Optional[np.ndarray] = None,
) -> DecoderOutput:
    """Decode chained blocks in order; each block's seed comes from the previous decode"""
    batch, k, _ = side.shape
    r1 = encoded.find(1, "R1") if shared_name is not None else None
    seed = seed0
    keys = []
    ok = np.ones((batch, k), dtype=bool)
    for i in range(k):
        mask, values = chained_frozen(
            encoded.find(i + 1, "F"), encoded.find(i + 1, "F^pad"), seed, sets, frozen_name, shared_name, r1
        )
        u_hat = sc_decode_batch(side[:, i], mask, values, model)
        keys.append(_take(u_hat, sets["K"]))
        seed = _take(u_hat, sets[a_name])
        if truth is not None:
            ok[:, i] = (u_hat == truth[:, i]).all(axis=-1)
    return DecoderOutput(keys=keys, ok=ok)


def star_encode(blocks: np.ndarray, seed: np.ndarray, sets: IndexSetBundle) -> EncoderOutput:
    """Single broadcast M = [U[F], U[F'] xor seed] from terminal 1; blocks (B, N)"""
    return EncoderOutput(
        keys=[_take(blocks, sets["K"])],
        messages=[
            Broadcast(1, 1, "F", _take(blocks, sets["F"])),
            Broadcast(1, 1, "F^pad", _take(blocks, sets["F'"]) ^ seed),
        ],
    )


def star_decode(
    side: np.ndarray,
    encoded: EncoderOutput,
    seed: np.ndarray,
    sets: IndexSetBundle,
    model: SymbolModel,
    truth: Optional[np.ndarray] = None,
) -> DecoderOutput:
    mask, values = chained_frozen(encoded.find(1, "F"), encoded.find(1, "F^pad"), seed, sets, "H*")
    u_hat = sc_decode_batch(side, mask, values, model)
    ok = (u_hat == truth).all(axis=-1)[:, None] if truth is not None else np.ones((len(side), 1), dtype=bool)
    return DecoderOutput(keys=[_take(u_hat, sets["K"])], ok=ok)


def _tri_key_set(sets: IndexSetBundle, block: int) -> IndexSet:
    return sets["K_XM"] if block == 0 else sets["K_XM"] | sets["F_XM"]


def tri_encode(blocks: np.ndarray, seeds: np.ndarray, sets: IndexSetBundle) -> EncoderOutput:
    """Terminal 2's messages over k blocks; blocks (B, k, N), seeds (B, k, |F'|)"""
    k = blocks.shape[1]
    out = EncoderOutput(keys=[], messages=[])
    for i in range(k):
        block = blocks[:, i]
        number = i + 1
        if i == 0:
            out.messages.append(Broadcast(number, 2, "F", _take(block, sets["F21"])))
        else:
            out.messages.append(Broadcast(number, 2, "M", _take(block, sets["F_XM"]) ^ out.kbar[-1]))
            out.messages.append(Broadcast(number, 2, "F", _take(block, sets["F2"])))
        out.messages.append(Broadcast(number, 2, "F^pad", _take(block, sets["F'"]) ^ seeds[:, i]))
        if i == k - 1:
            out.messages.append(Broadcast(number, 2, "Fbar", _take(block, sets["Fbar_k"])))
        else:
            out.kbar.append(_take(block, sets["Kbar"]))
        out.keys.append(_take(block, _tri_key_set(sets, i)))
    return out


def tri_decode_forward(
    side: np.ndarray,
    encoded: EncoderOutput,
    seeds: np.ndarray,
    sets: IndexSetBundle,
    model: SymbolModel,
    truth: Optional[np.ndarray] = None,
) -> DecoderOutput:
    """Terminal 1: blocks 1..k, unmasking F_XM with its own previous estimate of Kbar"""
    batch, k, n_len = side.shape
    mask = sets["H_X2|X1"].mask()
    keys, ok = [], np.ones((batch, k), dtype=bool)
    kbar = None
    for i in range(k):
        values = np.zeros((batch, n_len), dtype=np.uint8)
        if i == 0:
            _put(values, sets["F21"], encoded.find(1, "F"))
        else:
            _put(values, sets["F_XM"], encoded.find(i + 1, "M") ^ kbar)
            _put(values, sets["F2"], encoded.find(i + 1, "F"))
        _put(values, sets["F'"], encoded.find(i + 1, "F^pad") ^ seeds[:, i])
        u_hat = sc_decode_batch(side[:, i], mask, values, model)
        kbar = _take(u_hat, sets["Kbar"])
        keys.append(_take(u_hat, _tri_key_set(sets, i)))
        if truth is not None:
            ok[:, i] = (u_hat == truth[:, i]).all(axis=-1)
    return DecoderOutput(keys=keys, ok=ok)


def tri_decode_backward(
    side: np.ndarray,
    encoded: EncoderOutput,
    seeds: np.ndarray,
    sets: IndexSetBundle,
    model: SymbolModel,
    truth: Optional[np.ndarray] = None,
) -> DecoderOutput:
    """Terminal 3: blocks k..1, recovering Kbar_i from block i+1's masked F_XM"""
    batch, k, n_len = side.shape
    mask = sets["H_X2|X3"].mask()
    keys: list[Optional[np.ndarray]] = [None] * k
    ok = np.ones((batch, k), dtype=bool)
    kbar = None
    for i in range(k - 1, -1, -1):
        values = np.zeros((batch, n_len), dtype=np.uint8)
        _put(values, sets["F21"] if i == 0 else sets["F2"], encoded.find(i + 1, "F"))
        _put(values, sets["F'"], encoded.find(i + 1, "F^pad") ^ seeds[:, i])
        if i == k - 1:
            _put(values, sets["Fbar_k"], encoded.find(i + 1, "Fbar"))
        else:
            _put(values, sets["Kbar"], kbar)
        u_hat = sc_decode_batch(side[:, i], mask, values, model)
        if i > 0:
            kbar = encoded.find(i + 1, "M") ^ _take(u_hat, sets["F_XM"])
        keys[i] = _take(u_hat, _tri_key_set(sets, i))
        if truth is not None:
            ok[:, i] = (u_hat == truth[:, i]).all(axis=-1)
    return DecoderOutput(keys=keys, ok=ok)


def tree_publishers(sets: IndexSetBundle) -> list[int]:
    plan = sets.plan
    return [v for v in plan.order if plan.children.get(v)]


def tree_frozen_set(sets: IndexSetBundle, vertex: int) -> IndexSet:
    return sets[f"H_X{vertex}|X{sets.plan.star_child[vertex]}"]


def tree_encode(polarized: dict[int, np.ndarray], sets: IndexSetBundle) -> EncoderOutput:
    """Publishers' messages U_j[H_Xj|Xj*] and the root's key; polarized[j] is (B, N)"""
    messages = [
        Broadcast(1, v, "F", _take(polarized[v], tree_frozen_set(sets, v))) for v in tree_publishers(sets)
    ]
    return EncoderOutput(keys=[_take(polarized[sets.plan.root], sets["K"])], messages=messages)


def tree_decode(
    terminal: int,
    observation: np.ndarray,
    encoded: EncoderOutput,
    sets: IndexSetBundle,
    joint: np.ndarray,
    truth: Optional[dict[int, np.ndarray]] = None,
) -> DecoderOutput:
    """Walk up from terminal to the root, each estimate serving as side information for the next"""
    plan = sets.plan
    batch = observation.shape[0]
    ok = np.ones((batch, 1), dtype=bool)
    if terminal == plan.root:
        return DecoderOutput(keys=[_take(polar_transform_array(observation), sets["K"])], ok=ok)
    side, below = observation, terminal
    for vertex in plan.path_to_root(terminal):
        frozen = tree_frozen_set(sets, vertex)
        model = SymbolModel.from_joint(joint, vertex - 1, [below - 1])
        values = np.zeros((batch, sets.n_total), dtype=np.uint8)
        _put(values, frozen, encoded.find(1, "F", sender=vertex))
        u_hat = sc_decode_batch(side, frozen.mask(), values, model)
        if truth is not None:
            ok[:, 0] &= (u_hat == truth[vertex]).all(axis=-1)
        side, below = polar_transform_array(u_hat), vertex
    return DecoderOutput(keys=[_take(u_hat, sets["K"])], ok=ok)


def bio_zero_encode(blocks: np.ndarray, r1: np.ndarray, pads: np.ndarray, sets: IndexSetBundle) -> EncoderOutput:
    """M_i = [F_i, F'_i] xor P_i; the secret of block i is [V[K], V[F]]"""
    out = EncoderOutput(keys=[], messages=[Broadcast(1, 1, "R1", r1)])
    for i in range(blocks.shape[1]):
        block = blocks[:, i]
        helper = np.concatenate([_take(block, sets["F"]), _take(block, sets["F'"])], axis=-1)
        out.messages.append(Broadcast(i + 1, 1, "M", helper ^ pads[:, i]))
        out.keys.append(np.concatenate([_take(block, sets["K"]), _take(block, sets["F"])], axis=-1))
    return out


def bio_zero_decode(
    side: np.ndarray,
    encoded: EncoderOutput,
    pads: np.ndarray,
    sets: IndexSetBundle,
    model: SymbolModel,
    truth: Optional[np.ndarray] = None,
) -> DecoderOutput:
    batch, k, n_len = side.shape
    mask = sets["H_U|Y"].mask() | sets["V_U|X"].mask()
    split = len(sets["F"])
    keys, ok = [], np.ones((batch, k), dtype=bool)
    for i in range(k):
        helper = encoded.find(i + 1, "M") ^ pads[:, i]
        values = np.zeros((batch, n_len), dtype=np.uint8)
        _put(values, sets["V_U|X"], encoded.find(1, "R1"))
        _put(values, sets["F"], helper[:, :split])
        _put(values, sets["F'"], helper[:, split:])
        u_hat = sc_decode_batch(side[:, i], mask, values, model)
        keys.append(np.concatenate([_take(u_hat, sets["K"]), helper[:, :split]], axis=-1))
        if truth is not None:
            ok[:, i] = (u_hat == truth[:, i]).all(axis=-1)
    return DecoderOutput(keys=keys, ok=ok)


def quantize_blocks(
    x_blocks: np.ndarray,
    r1: np.ndarray,
    sets: IndexSetBundle,
    model: SymbolModel,
    rng: np.random.Generator,
) -> np.ndarray:
    """Stochastic SC encoding of each block (B, k, N) with the same R_1 every block"""
    out = np.empty_like(x_blocks)
    for i in range(x_blocks.shape[1]):
        out[:, i] = sc_stochastic_encode_batch(x_blocks[:, i], r1, sets["H_U"], sets["V_U|X"], model, rng)
    return out


def _hex_rows(arrays: Sequence[np.ndarray]) -> list[str]:
    return [bits_to_hex(a[0]) for a in arrays]


def _transcript(encoded: EncoderOutput) -> Transcript:
    return Transcript(
        messages=[
            Message(block=m.block, sender=m.sender, label=m.label, length=m.bits.shape[-1], payload=bits_to_hex(m.bits[0]))
            for m in encoded.messages
        ]
    )


def _report(
    model: str,
    sets: IndexSetBundle,
    k: int,
    encoder: int,
    encoded: EncoderOutput,
    decoded: dict[int, DecoderOutput],
    seed_bits: int,
    source: np.ndarray,
    spec,
    consumed: Sequence[np.ndarray] = (),
    pads: Sequence[np.ndarray] = (),
) -> ProtocolReport:
    n_len = sets.n_total
    encoder_key = encoded.key_bits()[0]
    keys = {encoder: bits_to_hex(encoder_key)}
    agreement = True
    diagnostics = []
    for terminal, out in sorted(decoded.items()):
        key = np.concatenate(out.keys, axis=-1)[0]
        keys[terminal] = bits_to_hex(key)
        agreement &= bool(np.array_equal(key, encoder_key))
        diagnostics.extend(
            BlockDiagnostic(terminal=terminal, block=i + 1, decode_ok=bool(out.ok[0, i])) for i in range(out.ok.shape[1])
        )
    transcript = _transcript(encoded)
    material = KeyMaterial(
        k=k,
        keys=_hex_rows(encoded.keys),
        key_lengths=[a.shape[-1] for a in encoded.keys],
        seeds_next=_hex_rows(encoded.seeds_next),
        kbar=_hex_rows(encoded.kbar),
        consumed_seeds=[bits_to_hex(s) for s in consumed],
        pads=[bits_to_hex(p) for p in pads],
    )
    eve_blocks = [bits_to_hex(source[i, spec.terminals]) for i in range(source.shape[0])] if spec.eve else []
    total = k * n_len
    report = ProtocolReport(
        model=model,
        n_total=n_len,
        k=k,
        encoder=encoder,
        keys=keys,
        key_length=len(encoder_key),
        agreement=agreement,
        transcript=transcript,
        material=material,
        key_rate=len(encoder_key) / total,
        seed_rate=seed_bits / total,
        public_rate=transcript.total_bits / total,
        seed_bits=seed_bits,
        eve_blocks=eve_blocks,
        diagnostics=diagnostics,
    )
    if not agreement:
        logger.debug("%s run ended without key agreement", model)
    return report


def _with_reclaim(report: ProtocolReport, a_bits: int) -> ProtocolReport:
    """The last block's seed is never consumed and could extend the key"""
    report.reclaimable_bits = a_bits
    report.reclaimable_key_rate = (report.key_length + a_bits) / (report.k * report.n_total)
    return report


def model1_run(
    spec,
    sets: IndexSetBundle,
    k: int = 1,
    seed: Optional[Sequence[int]] = None,
    rng: Optional[np.random.Generator] = None,
    blocks: Optional[np.ndarray] = None,
) -> ProtocolReport:
    """Alice (X1) and Bob (X2) over k chained blocks against eavesdropper Z"""
    _expect(sets, "model1")
    rng = rng if rng is not None else np.random.default_rng()
    n_len = sets.n_total
    source = _sample_source(spec, n_len, k, rng, blocks)
    seed0 = _provision(seed, (1, len(sets["F'"])), rng, "seed")
    u = polar_transform_array(source[None, :, 0])
    encoded = chained_encode(u, seed0, sets, "A_XYZ")
    bob = chained_decode(source[None, :, 1], encoded, seed0, sets, symbol_model(spec, "X1", "X2"), "H_X|Y", "A_XYZ", truth=u)
    report = _report("model1", sets, k, 1, encoded, {2: bob}, seed0.size, source, spec, consumed=[seed0[0]])
    return _with_reclaim(report, len(sets["A_XYZ"]))


def _auxiliary_run(
    model: str,
    spec,
    sets: IndexSetBundle,
    channel: Optional[TestChannel],
    k: int,
    seed: Optional[Sequence[int]],
    rng: Optional[np.random.Generator],
    blocks: Optional[np.ndarray],
    r1: Optional[Sequence[int]],
    a_name: str,
) -> ProtocolReport:
    rng = rng if rng is not None else np.random.default_rng()
    channel = channel or sets.channel
    if channel is None:
        raise SpecValidationError(f"{model} needs a test channel p(u|x)")
    n_len = sets.n_total
    source = _sample_source(spec, n_len, k, rng, blocks)
    seed0 = _provision(seed, (1, len(sets["F'"])), rng, "seed")
    r1_bits = _provision(r1, (1, len(sets["V_U|X"])), rng, "R1")
    v = quantize_blocks(source[None, :, 0], r1_bits, sets, symbol_model(spec, "U", "X1", channel), rng)
    encoded = chained_encode(v, seed0, sets, a_name, r1=r1_bits)
    bob = chained_decode(
        source[None, :, 1],
        encoded,
        seed0,
        sets,
        symbol_model(spec, "U", "X2", channel),
        "H_U|Y",
        a_name,
        shared_name="V_U|X",
        truth=v,
    )
    report = _report(model, sets, k, 1, encoded, {2: bob}, seed0.size, source, spec, consumed=[seed0[0]])
    return _with_reclaim(report, len(sets[a_name]))


def model2_run(
    spec,
    sets: IndexSetBundle,
    channel: Optional[TestChannel] = None,
    k: int = 1,
    seed: Optional[Sequence[int]] = None,
    rng: Optional[np.random.Generator] = None,
    blocks: Optional[np.ndarray] = None,
    r1: Optional[Sequence[int]] = None,
) -> ProtocolReport:
    """Rate-limited variant: Alice quantizes X to V with a fixed R_1 reused every block"""
    _expect(sets, "model2")
    return _auxiliary_run("model2", spec, sets, channel, k, seed, rng, blocks, r1, "A_UYZ")


def biometric_generated_run(
    spec,
    sets: IndexSetBundle,
    channel: Optional[TestChannel] = None,
    k: int = 1,
    seed: Optional[Sequence[int]] = None,
    rng: Optional[np.random.Generator] = None,
    blocks: Optional[np.ndarray] = None,
    r1: Optional[Sequence[int]] = None,
) -> ProtocolReport:
    """Generated-secret system: enrollment X, authentication Y, helper data public"""
    _expect(sets, "bio-gen")
    report = _auxiliary_run("bio-gen", spec, sets, channel, k, seed, rng, blocks, r1, "A_UXY")
    # H(M) <= |M|
    report.privacy_leakage_bound = report.transcript.total_bits
    return report


def biometric_zero_leakage_run(
    spec,
    sets: IndexSetBundle,
    channel: Optional[TestChannel] = None,
    k: int = 1,
    pads: Optional[Sequence[int]] = None,
    rng: Optional[np.random.Generator] = None,
    blocks: Optional[np.ndarray] = None,
    r1: Optional[Sequence[int]] = None,
) -> ProtocolReport:
    """Zero-leakage system: helper data one-time padded with pre-shared keys P_i"""
    _expect(sets, "bio-zero")
    rng = rng if rng is not None else np.random.default_rng()
    channel = channel or sets.channel
    if channel is None:
        raise SpecValidationError("bio-zero needs a test channel p(u|x)")
    n_len = sets.n_total
    source = _sample_source(spec, n_len, k, rng, blocks)
    pad_bits = _provision(pads, (1, k, len(sets["P"])), rng, "pads")
    r1_bits = _provision(r1, (1, len(sets["V_U|X"])), rng, "R1")
    v = quantize_blocks(source[None, :, 0], r1_bits, sets, symbol_model(spec, "U", "X1", channel), rng)
    encoded = bio_zero_encode(v, r1_bits, pad_bits, sets)
    decoder = bio_zero_decode(source[None, :, 1], encoded, pad_bits, sets, symbol_model(spec, "U", "X2", channel), truth=v)
    report = _report(
        "bio-zero", sets, k, 1, encoded, {2: decoder}, pad_bits.size, source, spec, pads=list(pad_bits[0])
    )
    report.pad_bits = int(pad_bits.size)
    return report


def model3_star_run(
    spec: BroadcastStar,
    sets: IndexSetBundle,
    seed: Optional[Sequence[int]] = None,
    rng: Optional[np.random.Generator] = None,
    blocks: Optional[np.ndarray] = None,
) -> ProtocolReport:
    """Terminal 1 broadcasts once; every terminal decodes against the least informed terminal's frozen set"""
    _expect(sets, "model3-star")
    rng = rng if rng is not None else np.random.default_rng()
    n_len = sets.n_total
    source = _sample_source(spec, n_len, 1, rng, blocks)
    seed_bits = _provision(seed, (1, len(sets["F'"])), rng, "seed")
    u = polar_transform_array(source[None, 0, 0])
    encoded = star_encode(u, seed_bits, sets)
    decoded = {
        j: star_decode(source[None, 0, j - 1], encoded, seed_bits, sets, symbol_model(spec, "X1", f"X{j}"), truth=u)
        for j in range(2, spec.terminals + 1)
    }
    return _report("model3-star", sets, 1, 1, encoded, decoded, seed_bits.size, source, spec, consumed=[seed_bits[0]])


def model3_tri_run(
    spec,
    sets: IndexSetBundle,
    k: int = 1,
    seeds: Optional[Sequence[int]] = None,
    rng: Optional[np.random.Generator] = None,
    blocks: Optional[np.ndarray] = None,
) -> ProtocolReport:
    """Terminal 2 serves terminal 1 forward and terminal 3 backward over k blocks"""
    _expect(sets, "model3-tri")
    rng = rng if rng is not None else np.random.default_rng()
    n_len = sets.n_total
    source = _sample_source(spec, n_len, k, rng, blocks)
    seed_bits = _provision(seeds, (1, k, len(sets["F'"])), rng, "seeds")
    u = polar_transform_array(source[None, :, 1])
    encoded = tri_encode(u, seed_bits, sets)
    decoded = {
        1: tri_decode_forward(source[None, :, 0], encoded, seed_bits, sets, symbol_model(spec, "X2", "X1"), truth=u),
        3: tri_decode_backward(source[None, :, 2], encoded, seed_bits, sets, symbol_model(spec, "X2", "X3"), truth=u),
    }
    return _report(
        "model3-tri", sets, k, 2, encoded, decoded, seed_bits.size, source, spec, consumed=list(seed_bits[0])
    )


def model4_run(
    spec: MarkovTree,
    sets: IndexSetBundle,
    rng: Optional[np.random.Generator] = None,
    blocks: Optional[np.ndarray] = None,
) -> ProtocolReport:
    """Publishers along the BFS tree speak once; the key is the root's unpublished positions"""
    _expect(sets, "model4")
    rng = rng if rng is not None else np.random.default_rng()
    n_len = sets.n_total
    source = _sample_source(spec, n_len, 1, rng, blocks)
    observations = {v: source[None, 0, v - 1] for v in range(1, spec.terminals + 1)}
    polarized = {v: polar_transform_array(bits) for v, bits in observations.items()}
    encoded = tree_encode(polarized, sets)
    joint = joint_pmf(spec)
    root = sets.plan.root
    decoded = {
        v: tree_decode(v, observations[v], encoded, sets, joint, truth=polarized)
        for v in range(1, spec.terminals + 1)
        if v != root
    }
    return _report("model4", sets, 1, root, encoded, decoded, 0, source, spec)


def expected_message_length(sets: IndexSetBundle, message: Message) -> int:
    """Declared size of a message under the run's index sets"""
    s = sets.sets
    if message.label == "R1":
        return len(s["V_U|X"])
    if sets.model == "model3-tri":
        return {
            "F": len(s["F21"] if message.block == 1 else s["F2"]),
            "M": len(s["F_XM"]),
            "F^pad": len(s["F'"]),
            "Fbar": len(s["Fbar_k"]),
        }[message.label]
    if sets.model == "model4":
        return len(tree_frozen_set(sets, message.sender))
    if sets.model == "bio-zero":
        return len(s["P"])
    return {"F": len(s["F"]), "F^pad": len(s["F'"])}[message.label]


def check_transcript(report: ProtocolReport, sets: IndexSetBundle) -> bool:
    return all(m.length == expected_message_length(sets, m) for m in report.transcript.messages)


def run_model(
    model: str,
    spec,
    sets: IndexSetBundle,
    k: int = 1,
    rng: Optional[np.random.Generator] = None,
    blocks: Optional[np.ndarray] = None,
    channel: Optional[TestChannel] = None,
) -> ProtocolReport:
    """Dispatch on the model tag with harness-provisioned seeds"""
    if model == "model1":
        return model1_run(spec, sets, k, rng=rng, blocks=blocks)
    if model == "model2":
        return model2_run(spec, sets, channel, k, rng=rng, blocks=blocks)
    if model == "bio-gen":
        return biometric_generated_run(spec, sets, channel, k, rng=rng, blocks=blocks)
    if model == "bio-zero":
        return biometric_zero_leakage_run(spec, sets, channel, k, rng=rng, blocks=blocks)
    if model == "model3-star":
        return model3_star_run(spec, sets, rng=rng, blocks=blocks)
    if model == "model3-tri":
        return model3_tri_run(spec, sets, k, rng=rng, blocks=blocks)
    if model == "model4":
        return model4_run(spec, sets, rng=rng, blocks=blocks)
    raise SpecValidationError(f"unknown model {model!r}")
