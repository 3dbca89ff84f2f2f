"""Layer state-action space: types, constraints, transitions, serialization.

The agent builds a CNN layer by layer. States are binned tuples (layer type,
depth, layer params, representation-size bin, consecutive-FC count); actions
either append a layer or terminate the architecture with a softmax head,
optionally preceded by global average pooling.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import lru_cache


# ---------------------------------------------------------------------------
# Errors
# ---------------------------------------------------------------------------

class InvalidSizeError(ValueError):
    """Representation size below 1."""


class DegeneratePoolError(ValueError):
    """Pooling window larger than the input it is applied to."""


class ConstraintViolation(ValueError):
    """An action was applied from a state where it is not legal."""

    def __init__(self, rule: str, message: str):
        super().__init__(f"rule ({rule}): {message}")
        self.rule = rule


class ParseError(ValueError):
    """Malformed architecture string."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at offset {offset})")
        self.offset = offset


class ValidationError(ValueError):
    """Architecture failed validation; carries the violation list."""

    def __init__(self, violations: list["Violation"]):
        super().__init__("; ".join(str(v) for v in violations))
        self.violations = violations


# ---------------------------------------------------------------------------
# Layer descriptors
# ---------------------------------------------------------------------------

@dataclass(frozen=True, slots=True)
class Conv:
    filters: int
    field: int
    stride: int = 1


@dataclass(frozen=True, slots=True)
class Pool:
    field: int
    stride: int


@dataclass(frozen=True, slots=True)
class FC:
    neurons: int


@dataclass(frozen=True, slots=True)
class GAP:
    classes: int


@dataclass(frozen=True, slots=True)
class SM:
    classes: int


LayerDescriptor = Conv | Pool | FC | GAP | SM


class TerminationKind(enum.Enum):
    SM = "SM"
    GAP = "GAP"


@dataclass(frozen=True, slots=True)
class AddLayer:
    layer: Conv | Pool | FC


@dataclass(frozen=True, slots=True)
class Terminate:
    kind: TerminationKind


ActionChoice = AddLayer | Terminate

TERMINATE_SM = Terminate(TerminationKind.SM)
TERMINATE_GAP = Terminate(TerminationKind.GAP)


class StateType(enum.Enum):
    START = "Start"
    CONV = "C"
    POOL = "P"
    FC = "FC"


@dataclass(frozen=True, slots=True)
class AgentState:
    """Binned Q-table state.

    ``params`` mirrors the layer that produced the state: (filters, field)
    for conv, (field, stride) for pool, (neurons,) for FC, () for start.
    """

    layer_type: StateType
    params: tuple[int, ...]
    depth: int
    rsize_bin: int
    consecutive_fc: int


@dataclass(frozen=True, slots=True)
class SamplerContext:
    """Exact-size companion to the binned state during episode sampling.

    The Q-table only ever sees ``last.rsize_bin``; the sampler tracks the
    true spatial size so that pooling transitions resolve deterministically.
    The same binned (state, action) pair can still land in different binned
    successors, which is the intended transition stochasticity.
    """

    true_rsize: int
    depth: int
    last: AgentState
    consecutive_fc: int


# ---------------------------------------------------------------------------
# Space configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True, slots=True)
class SpaceConfig:
    max_depth: int = 11
    conv_fields: tuple[int, ...] = (1, 3, 5)
    conv_filters: tuple[int, ...] = (64, 128, 256, 512)
    pool_variants: tuple[tuple[int, int], ...] = ((2, 2), (3, 2), (5, 3))
    fc_neurons: tuple[int, ...] = (512, 256, 128)
    max_consecutive_fc: int = 2
    bin_boundaries: tuple[int, ...] = (8, 4, 1)
    input_size: int = 32
    input_channels: int = 3
    num_classes: int = 10

    def __post_init__(self):
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        for name in ("conv_fields", "conv_filters", "pool_variants", "fc_neurons"):
            if not getattr(self, name):
                raise ValueError(f"{name} must be non-empty")
        object.__setattr__(self, "conv_fields", tuple(sorted(self.conv_fields)))
        object.__setattr__(self, "conv_filters", tuple(sorted(self.conv_filters)))
        object.__setattr__(self, "pool_variants", tuple(sorted(self.pool_variants)))
        object.__setattr__(self, "fc_neurons", tuple(sorted(self.fc_neurons, reverse=True)))
        bounds = tuple(self.bin_boundaries)
        if not bounds or any(b < 1 for b in bounds) \
                or any(hi <= lo for hi, lo in zip(bounds, bounds[1:])):
            raise ValueError("bin_boundaries must be strictly descending and >= 1")
        object.__setattr__(self, "bin_boundaries", bounds)
        for f, s in self.pool_variants:
            if not (f >= s >= 1):
                raise ValueError(f"pool variant ({f},{s}) must satisfy field >= stride >= 1")
        if self.input_size < 1 or self.input_channels < 1 or self.num_classes < 1:
            raise ValueError("input_size, input_channels, num_classes must be >= 1")

    @property
    def num_bins(self) -> int:
        return len(self.bin_boundaries)

    def bin_lower_bound(self, rsize_bin: int) -> int:
        """Smallest true size guaranteed by a bin index."""
        return self.bin_boundaries[rsize_bin - 1]

    def to_dict(self) -> dict:
        return {
            "max_depth": self.max_depth,
            "conv_fields": list(self.conv_fields),
            "conv_filters": list(self.conv_filters),
            "pool_variants": [list(v) for v in self.pool_variants],
            "fc_neurons": list(self.fc_neurons),
            "max_consecutive_fc": self.max_consecutive_fc,
            "bin_boundaries": list(self.bin_boundaries),
            "input_size": self.input_size,
            "input_channels": self.input_channels,
            "num_classes": self.num_classes,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SpaceConfig":
        kwargs = dict(data)
        if "pool_variants" in kwargs:
            kwargs["pool_variants"] = tuple(tuple(v) for v in kwargs["pool_variants"])
        for name in ("conv_fields", "conv_filters", "fc_neurons", "bin_boundaries"):
            if name in kwargs:
                kwargs[name] = tuple(kwargs[name])
        return cls(**kwargs)


def cifar10_space() -> SpaceConfig:
    """32x32x3 input with the deeper 18-layer budget."""
    return SpaceConfig(max_depth=18, input_size=32, input_channels=3)


def mnist_space(max_depth: int = 11) -> SpaceConfig:
    return SpaceConfig(max_depth=max_depth, input_size=28, input_channels=1)


# ---------------------------------------------------------------------------
# Binning and size arithmetic
# ---------------------------------------------------------------------------

def bin_of(size: int, config: SpaceConfig) -> int:
    """Map a true representation size to its bin index (1 is largest)."""
    if size < 1:
        raise InvalidSizeError(f"representation size must be >= 1, got {size}")
    for idx, bound in enumerate(config.bin_boundaries, start=1):
        if size >= bound:
            return idx
    raise InvalidSizeError(f"size {size} below the smallest bin boundary")


def pool_output_size(size: int, field: int, stride: int) -> int:
    """Non-padded pooling: floor((size - field) / stride) + 1."""
    if size < field:
        raise DegeneratePoolError(f"pool field {field} exceeds input size {size}")
    return (size - field) // stride + 1


# ---------------------------------------------------------------------------
# Legal actions
# ---------------------------------------------------------------------------

@lru_cache(maxsize=None)
def legal_actions(state: AgentState, config: SpaceConfig) -> tuple[ActionChoice, ...]:
    """Actions permitted from ``state``, in canonical order.

    Canonical order: conv ascending by (field, filters), pool ascending by
    (field, stride), FC descending by neurons, then Terminate(SM) and
    Terminate(GAP). The constraints:

      (a) termination is always available; GAP termination never follows FC;
      (b) states at max depth may only terminate;
      (c) pool may not follow pool;
      (d) FC may be followed only by FC (with fewer-or-equal neurons, up to
          the consecutive-FC cap) or termination;
      (e) FC is reachable only from bins whose sizes are small enough
          (bin index >= 2);
      (f) conv/pool receptive fields must not exceed the bin's guaranteed
          lower bound on the true size.
    """
    actions: list[ActionChoice] = []
    if state.depth < config.max_depth:
        if state.layer_type is not StateType.FC:
            bound = config.bin_lower_bound(state.rsize_bin)
            for f in config.conv_fields:
                if f <= bound:
                    for d in config.conv_filters:
                        actions.append(AddLayer(Conv(d, f)))
            if state.layer_type is not StateType.POOL:
                for f, s in config.pool_variants:
                    if f <= bound:
                        actions.append(AddLayer(Pool(f, s)))
            if state.rsize_bin >= 2:
                for d in config.fc_neurons:
                    actions.append(AddLayer(FC(d)))
        elif state.consecutive_fc < config.max_consecutive_fc:
            for d in config.fc_neurons:
                if d <= state.params[0]:
                    actions.append(AddLayer(FC(d)))
    actions.append(TERMINATE_SM)
    if state.layer_type is not StateType.FC:
        actions.append(TERMINATE_GAP)
    return tuple(actions)


def _illegal_reason(state: AgentState, action: ActionChoice,
                    config: SpaceConfig) -> tuple[str, str] | None:
    """(rule, message) explaining why ``action`` is not legal, else None."""
    if isinstance(action, Terminate):
        if action.kind is TerminationKind.GAP and state.layer_type is StateType.FC:
            return "a", "global-average-pooling termination is not available after FC"
        return None
    layer = action.layer
    if state.depth >= config.max_depth:
        return "b", f"state at max depth {config.max_depth} may only terminate"
    if state.layer_type is StateType.FC:
        if not isinstance(layer, FC):
            return "d", "an FC state may be followed only by FC or termination"
        if state.consecutive_fc >= config.max_consecutive_fc:
            return "d", f"at most {config.max_consecutive_fc} consecutive FC layers"
        if layer.neurons > state.params[0]:
            return "d", f"FC neurons may not increase ({state.params[0]} -> {layer.neurons})"
        if layer.neurons not in config.fc_neurons:
            return "d", f"FC({layer.neurons}) outside configured neuron set"
        return None
    bound = config.bin_lower_bound(state.rsize_bin)
    if isinstance(layer, Conv):
        if layer.stride != 1:
            return "f", "conv stride is fixed to 1"
        if layer.field not in config.conv_fields or layer.filters not in config.conv_filters:
            return "f", f"C({layer.filters},{layer.field},1) outside configured sets"
        if layer.field > bound:
            return "f", (f"conv field {layer.field} exceeds bin {state.rsize_bin} "
                         f"guaranteed size {bound}")
        return None
    if isinstance(layer, Pool):
        if state.layer_type is StateType.POOL:
            return "c", "pooling may not follow pooling"
        if (layer.field, layer.stride) not in config.pool_variants:
            return "c", f"P({layer.field},{layer.stride}) outside configured variants"
        if layer.field > bound:
            return "f", (f"pool field {layer.field} exceeds bin {state.rsize_bin} "
                         f"guaranteed size {bound}")
        return None
    if isinstance(layer, FC):
        if state.rsize_bin < 2:
            return "e", "FC is only reachable once the representation is small (bin >= 2)"
        if layer.neurons not in config.fc_neurons:
            return "e", f"FC({layer.neurons}) outside configured neuron set"
        return None
    return "a", f"layer {layer!r} cannot be added mid-architecture"


# ---------------------------------------------------------------------------
# Transitions
# ---------------------------------------------------------------------------

def start_state(config: SpaceConfig) -> AgentState:
    return AgentState(StateType.START, (), 0, bin_of(config.input_size, config), 0)


def start_context(config: SpaceConfig) -> SamplerContext:
    return SamplerContext(config.input_size, 0, start_state(config), 0)


def transition(ctx: SamplerContext, action: ActionChoice,
               config: SpaceConfig) -> tuple[AgentState, SamplerContext] | None:
    """Apply an action; returns the next (state, context) or None on termination."""
    reason = _illegal_reason(ctx.last, action, config)
    if reason is not None:
        raise ConstraintViolation(*reason)
    if isinstance(action, Terminate):
        return None
    layer = action.layer
    depth = ctx.depth + 1
    if isinstance(layer, Conv):
        true_rsize = ctx.true_rsize
        state = AgentState(StateType.CONV, (layer.filters, layer.field), depth,
                           bin_of(true_rsize, config), 0)
    elif isinstance(layer, Pool):
        true_rsize = pool_output_size(ctx.true_rsize, layer.field, layer.stride)
        state = AgentState(StateType.POOL, (layer.field, layer.stride), depth,
                           bin_of(true_rsize, config), 0)
    else:
        true_rsize = ctx.true_rsize
        state = AgentState(StateType.FC, (layer.neurons,), depth,
                           bin_of(true_rsize, config), ctx.consecutive_fc + 1)
    return state, SamplerContext(true_rsize, depth, state, state.consecutive_fc)


# ---------------------------------------------------------------------------
# Architecture specs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ArchitectureSpec:
    """Ordered layer sequence; a valid spec ends in SM, optionally GAP before it."""

    layers: tuple[LayerDescriptor, ...]

    def __str__(self) -> str:
        return serialize(self)


def spec_from_actions(actions: tuple[ActionChoice, ...] | list[ActionChoice],
                      config: SpaceConfig) -> ArchitectureSpec:
    """Materialize the architecture an action sequence denotes."""
    layers: list[LayerDescriptor] = []
    for act in actions:
        if isinstance(act, AddLayer):
            layers.append(act.layer)
        elif act.kind is TerminationKind.GAP:
            layers.append(GAP(config.num_classes))
            layers.append(SM(config.num_classes))
        else:
            layers.append(SM(config.num_classes))
    return ArchitectureSpec(tuple(layers))


def actions_from_spec(spec: ArchitectureSpec,
                      config: SpaceConfig) -> tuple[ActionChoice, ...]:
    """Inverse of :func:`spec_from_actions` for structurally valid specs."""
    actions: list[ActionChoice] = []
    layers = spec.layers
    i = 0
    while i < len(layers):
        layer = layers[i]
        if isinstance(layer, GAP):
            if i + 2 != len(layers) or not isinstance(layers[i + 1], SM):
                raise ValidationError([Violation("structure", i,
                                                 "GAP must immediately precede the final SM")])
            actions.append(TERMINATE_GAP)
            return tuple(actions)
        if isinstance(layer, SM):
            if i + 1 != len(layers):
                raise ValidationError([Violation("structure", i, "SM must be final")])
            actions.append(TERMINATE_SM)
            return tuple(actions)
        actions.append(AddLayer(layer))
        i += 1
    raise ValidationError([Violation("structure", len(layers), "missing termination")])


def replay_episode(spec: ArchitectureSpec,
                   config: SpaceConfig) -> tuple[tuple[AgentState, ...], tuple[ActionChoice, ...]]:
    """Replay a spec from the start context; returns the (states, actions) pair.

    Raises ConstraintViolation on the first illegal transition.
    """
    actions = actions_from_spec(spec, config)
    ctx = start_context(config)
    states = [ctx.last]
    for act in actions[:-1]:
        step = transition(ctx, act, config)
        assert step is not None
        state, ctx = step
        states.append(state)
    if transition(ctx, actions[-1], config) is not None:
        raise ConstraintViolation("structure", "episode did not end in termination")
    return tuple(states), actions


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Violation:
    rule: str
    index: int
    message: str

    def __str__(self) -> str:
        return f"layer {self.index}: rule ({self.rule}): {self.message}"


def validate(spec: ArchitectureSpec, config: SpaceConfig) -> list[Violation]:
    """All constraint violations in ``spec``; empty list means valid."""
    violations: list[Violation] = []
    layers = spec.layers
    if not layers:
        return [Violation("structure", 0, "empty architecture")]

    sm_positions = [i for i, l in enumerate(layers) if isinstance(l, SM)]
    gap_positions = [i for i, l in enumerate(layers) if isinstance(l, GAP)]
    if len(sm_positions) != 1 or sm_positions[0] != len(layers) - 1:
        violations.append(Violation("structure", sm_positions[0] if sm_positions else len(layers) - 1,
                                    "exactly one SM is required, at the final position"))
    if len(gap_positions) > 1 or (gap_positions and gap_positions[0] != len(layers) - 2):
        violations.append(Violation("structure", gap_positions[0],
                                    "at most one GAP, immediately before the final SM"))
    for i in gap_positions + sm_positions:
        if layers[i].classes != config.num_classes:
            violations.append(Violation("structure", i,
                                        f"termination classes {layers[i].classes} != "
                                        f"configured {config.num_classes}"))

    # Replay the body permissively so every rule violation is collected.
    state = start_state(config)
    true_rsize = config.input_size
    for i, layer in enumerate(layers):
        if isinstance(layer, SM):
            continue
        if isinstance(layer, GAP):
            reason = _illegal_reason(state, TERMINATE_GAP, config)
            if reason is not None:
                violations.append(Violation(reason[0], i, reason[1]))
            continue
        reason = _illegal_reason(state, AddLayer(layer), config)
        if reason is not None:
            violations.append(Violation(reason[0], i, reason[1]))
        depth = state.depth + 1
        if isinstance(layer, Conv):
            state = AgentState(StateType.CONV, (layer.filters, layer.field), depth,
                               bin_of(true_rsize, config), 0)
        elif isinstance(layer, Pool):
            if layer.stride >= 1 and 1 <= layer.field <= true_rsize:
                true_rsize = pool_output_size(true_rsize, layer.field, layer.stride)
            else:
                true_rsize = 1  # keep scanning after a degenerate pool
            state = AgentState(StateType.POOL, (layer.field, layer.stride), depth,
                               bin_of(true_rsize, config), 0)
        else:
            state = AgentState(StateType.FC, (layer.neurons,), depth,
                               bin_of(true_rsize, config), state.consecutive_fc + 1)
    return violations


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def _layer_term(layer: LayerDescriptor) -> str:
    if isinstance(layer, Conv):
        return f"C({layer.filters},{layer.field},{layer.stride})"
    if isinstance(layer, Pool):
        return f"P({layer.field},{layer.stride})"
    if isinstance(layer, FC):
        return f"FC({layer.neurons})"
    if isinstance(layer, GAP):
        return f"GAP({layer.classes})"
    return f"SM({layer.classes})"


def serialize(spec: ArchitectureSpec) -> str:
    """Canonical bracketed form; this string keys the replay dictionary."""
    return "[" + ", ".join(_layer_term(l) for l in spec.layers) + "]"


_TAG_ARITY = {"C": 3, "P": 2, "FC": 1, "GAP": 1, "SM": 1}


def parse(text: str) -> ArchitectureSpec:
    """Parse the bracketed architecture notation.

    Raises ParseError with a character offset on malformed input. Parameter
    values outside a config's sets are a validation concern, not a parse
    failure.
    """
    pos = 0
    n = len(text)

    def skip_spaces():
        nonlocal pos
        while pos < n and text[pos] in " \t":
            pos += 1

    def fail(message: str):
        raise ParseError(message, pos)

    skip_spaces()
    if pos >= n or text[pos] != "[":
        fail("expected '['")
    pos += 1
    layers: list[LayerDescriptor] = []
    skip_spaces()
    if pos < n and text[pos] == "]":
        pos += 1
    else:
        while True:
            skip_spaces()
            tag_start = pos
            while pos < n and text[pos].isalpha():
                pos += 1
            tag = text[tag_start:pos]
            if not tag:
                fail("expected a layer tag")
            if tag not in _TAG_ARITY:
                pos = tag_start
                fail(f"unknown layer tag {tag!r}")
            if pos >= n or text[pos] != "(":
                fail("expected '('")
            pos += 1
            args: list[int] = []
            while True:
                digit_start = pos
                while pos < n and text[pos].isdigit():
                    pos += 1
                if pos == digit_start:
                    fail("expected an integer")
                args.append(int(text[digit_start:pos]))
                if pos < n and text[pos] == ",":
                    pos += 1
                    continue
                break
            if pos >= n or text[pos] != ")":
                fail("expected ')'")
            pos += 1
            if len(args) != _TAG_ARITY[tag]:
                pos = tag_start
                fail(f"{tag} takes {_TAG_ARITY[tag]} argument(s), got {len(args)}")
            if tag == "C":
                layers.append(Conv(args[0], args[1], args[2]))
            elif tag == "P":
                layers.append(Pool(args[0], args[1]))
            elif tag == "FC":
                layers.append(FC(args[0]))
            elif tag == "GAP":
                layers.append(GAP(args[0]))
            else:
                layers.append(SM(args[0]))
            skip_spaces()
            if pos < n and text[pos] == ",":
                pos += 1
                continue
            if pos < n and text[pos] == "]":
                pos += 1
                break
            fail("expected ',' or ']'")
    skip_spaces()
    if pos != n:
        fail("trailing characters after ']'")
    return ArchitectureSpec(tuple(layers))


# ---------------------------------------------------------------------------
# Parameter counting
# ---------------------------------------------------------------------------

def param_count(spec: ArchitectureSpec, config: SpaceConfig) -> int:
    """Trainable parameter count under the artifact's layer conventions.

    Conv layers preserve spatial size (stride 1, same padding) and cost
    f*f*c_in*c_out + c_out. The first FC flattens spatial x channels. A
    softmax head reached directly from conv/pool acts on globally
    average-pooled channels; after GAP it acts on the pooled class channels.
    Pooling and GAP carry no weights.
    """
    violations = validate(spec, config)
    if violations:
        raise ValidationError(violations)
    size = config.input_size
    channels = config.input_channels
    fc_width: int | None = None
    after_gap = False
    total = 0
    for layer in spec.layers:
        if isinstance(layer, Conv):
            total += layer.field * layer.field * channels * layer.filters + layer.filters
            channels = layer.filters
        elif isinstance(layer, Pool):
            size = pool_output_size(size, layer.field, layer.stride)
        elif isinstance(layer, FC):
            n_in = fc_width if fc_width is not None else size * size * channels
            total += n_in * layer.neurons + layer.neurons
            fc_width = layer.neurons
        elif isinstance(layer, GAP):
            after_gap = True
        else:  # SM
            if after_gap:
                n_in = layer.classes
            elif fc_width is not None:
                n_in = fc_width
            else:
                n_in = channels
            total += n_in * layer.classes + layer.classes
    return total


# ---------------------------------------------------------------------------
# Canonical textual keys (snapshot format)
# ---------------------------------------------------------------------------

def action_key(action: ActionChoice) -> str:
    if isinstance(action, Terminate):
        return action.kind.value
    return _layer_term(action.layer)


def state_key(state: AgentState) -> str:
    if state.layer_type is StateType.START:
        head = "Start"
    elif state.layer_type is StateType.CONV:
        head = f"C({state.params[0]},{state.params[1]},1)"
    elif state.layer_type is StateType.POOL:
        head = f"P({state.params[0]},{state.params[1]})"
    else:
        head = f"FC({state.params[0]})"
    return f"{head}@d{state.depth}@b{state.rsize_bin}@fc{state.consecutive_fc}"


def parse_action_key(key: str) -> ActionChoice:
    if key == "SM":
        return TERMINATE_SM
    if key == "GAP":
        return TERMINATE_GAP
    layer = parse(f"[{key}]").layers[0]
    if isinstance(layer, (GAP, SM)):
        raise ParseError(f"{key!r} is not an action", 0)
    return AddLayer(layer)


def parse_state_key(key: str) -> AgentState:
    head, d, b, fc = key.split("@")
    depth = int(d[1:])
    rbin = int(b[1:])
    cfc = int(fc[2:])
    if head == "Start":
        return AgentState(StateType.START, (), depth, rbin, cfc)
    layer = parse(f"[{head}]").layers[0]
    if isinstance(layer, Conv):
        return AgentState(StateType.CONV, (layer.filters, layer.field), depth, rbin, cfc)
    if isinstance(layer, Pool):
        return AgentState(StateType.POOL, (layer.field, layer.stride), depth, rbin, cfc)
    if isinstance(layer, FC):
        return AgentState(StateType.FC, (layer.neurons,), depth, rbin, cfc)
    raise ParseError(f"{head!r} is not a state head", 0)
