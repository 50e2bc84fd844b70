"""Full prediction pipeline: encoders, interaction blocks, fusion, decoding.

Stages mirror the architecture: a history encoder turns each agent's T-step
track into one feature row, an interaction block mixes agents, a node
encoder turns each lane's resampled centerline into one row, a stack of
topology-biased layers mixes lanes (every layer reuses one composed bias
set), a four-step fusion exchanges information between the two sets with
local attention, and K decoding heads emit offset sequences plus a score
that becomes the mode confidence.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import scenario as sc
from .autodiff import (
    ParameterRegistry,
    Tensor,
    add,
    concat,
    gather_rows,
    matmul,
    relu,
    reshape,
    row_softmax,
    uniform_init,
)
from .attention import (
    AttentionConfig,
    BiasSet,
    BiasWeights,
    LayerWeights,
    compose_bias_matrices,
    init_bias_weights,
    init_layer_weights,
    nearest_neighbor_mask,
    transformer_layer,
)
from .topology import TopologyMatrices, build_topology

__all__ = [
    "FEATURE_SCALE",
    "ModelConfig",
    "ModelParams",
    "Sample",
    "PredictionSet",
    "ModelOutput",
    "prepare_sample",
    "init_model",
    "hte_forward",
    "ain_forward",
    "map_net_forward",
    "fusion_forward",
    "decode_trajectories",
    "model_forward",
    "predict",
]

# positions and velocities are divided by this before entering the encoders
FEATURE_SCALE = 10.0

N_AGENT_FEATURES = 8
N_MAP_FEATURES = 5


@dataclass
class ModelConfig:
    t_history: int = 50
    t_future: int = 60
    modes: int = 6
    d_model: int = 32
    heads: int = 4
    layers: int = 2
    n_lane_nodes: int = 10
    m_agent: int = N_AGENT_FEATURES
    m_map: int = N_MAP_FEATURES
    decoder_hidden: int = 64
    e_a2a: int = 16
    e_a2l: int = 32
    e_l2a: int = 8
    use_relation_bias: bool = True
    use_reachability_bias: bool = True
    use_local_attention: bool = True
    connection_types: tuple = sc.BOUNDARY_TYPES

    def __post_init__(self):
        if self.modes < 1:
            raise ValueError(f"need at least 1 mode, got {self.modes}")
        if self.m_agent != N_AGENT_FEATURES or self.m_map != N_MAP_FEATURES:
            raise ValueError(
                f"feature widths are fixed at {N_AGENT_FEATURES}/{N_MAP_FEATURES}")
        if self.n_lane_nodes < 2:
            raise ValueError("n_lane_nodes must be at least 2")

    def attention(self) -> AttentionConfig:
        return AttentionConfig(d_model=self.d_model, heads=self.heads)


@dataclass
class Sample:
    """One scenario prepared for the network, in the target's frame."""

    scenario: sc.Scenario
    topology: TopologyMatrices
    agent_features: np.ndarray     # (N_a, T, 8)
    observed: np.ndarray           # (N_a, T) bool
    agent_positions: np.ndarray    # (N_a, 2) last observed position
    lane_features: np.ndarray      # (N_l, N_ls, 5)
    lane_positions: np.ndarray     # (N_l, 2) arc-length midpoints
    target_ids: list
    ground_truth: np.ndarray | None
    frame_origin: np.ndarray
    frame_heading: float

    def to_world(self, points: np.ndarray) -> np.ndarray:
        """Map normalized-frame points back to raw scene coordinates."""
        c, s = np.cos(self.frame_heading), np.sin(self.frame_heading)
        rot = np.array([[c, -s], [s, c]])
        return points @ rot.T + self.frame_origin


def prepare_sample(raw: sc.Scenario, cfg: ModelConfig) -> Sample:
    sc.validate_scenario(raw)
    t = raw.t_history
    if t != cfg.t_history:
        raise ValueError(f"history length {t} does not match configured {cfg.t_history}")
    target = raw.target_ids[0]
    ref = raw.agents[target]
    origin = ref.positions[t - 1].copy()
    heading = float(ref.headings[t - 1])
    norm = sc.normalize_scenario(raw, target)

    n_a = len(norm.agents)
    feats = np.zeros((n_a, t, N_AGENT_FEATURES))
    observed = np.zeros((n_a, t), dtype=bool)
    agent_pos = np.zeros((n_a, 2))
    for i, a in enumerate(norm.agents):
        if not a.padding.any():
            raise ValueError(f"empty history for agent {i}")
        observed[i] = a.padding
        feats[i, :, 0:2] = a.positions / FEATURE_SCALE
        feats[i, :, 2] = a.padding.astype(np.float64)
        feats[i, :, 3] = float(a.category)
        feats[i, :, 4] = float(sc.AGENT_TYPES.index(a.agent_type))
        feats[i, :, 5] = a.headings
        feats[i, :, 6:8] = a.velocities / FEATURE_SCALE
        agent_pos[i] = a.positions[np.flatnonzero(a.padding)[-1]]

    lanes = [sc.resample_lane_nodes(l, cfg.n_lane_nodes) for l in norm.lanes]
    resampled = sc.Scenario(lanes=lanes, connectivity=norm.connectivity,
                            agents=norm.agents, target_ids=norm.target_ids,
                            ground_truth=norm.ground_truth, name=norm.name)
    topo = build_topology(resampled, cfg.connection_types)

    n_l = len(lanes)
    lane_feats = np.zeros((n_l, cfg.n_lane_nodes, N_MAP_FEATURES))
    lane_pos = np.zeros((n_l, 2))
    for i, l in enumerate(lanes):
        pts = l.centerline
        tangent = sc.finite_difference_velocities(pts, 1.0)
        norms = np.linalg.norm(tangent, axis=1, keepdims=True)
        tangent = np.divide(tangent, norms, out=np.zeros_like(tangent), where=norms > 0)
        lane_feats[i, :, 0:2] = pts / FEATURE_SCALE
        lane_feats[i, :, 2:4] = tangent
        lane_feats[i, :, 4] = float(sc.LANE_TYPES.index(l.lane_type))
        lane_pos[i] = sc.arc_length_midpoint(pts)

    return Sample(
        scenario=resampled,
        topology=topo,
        agent_features=feats,
        observed=observed,
        agent_positions=agent_pos,
        lane_features=lane_feats,
        lane_positions=lane_pos,
        target_ids=list(norm.target_ids),
        ground_truth=norm.ground_truth,
        frame_origin=origin,
        frame_heading=heading,
    )


# ---------------------------------------------------------------------------
# parameters


@dataclass
class MLPWeights:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor


@dataclass
class DecoderHead:
    w1: Tensor
    b1: Tensor
    w_offsets: Tensor
    b_offsets: Tensor
    w_score: Tensor
    b_score: Tensor


@dataclass
class ModelParams:
    cfg: ModelConfig
    agent_embed: MLPWeights
    temporal_layers: list
    temporal_agg: MLPWeights
    interaction: LayerWeights
    node_embed: MLPWeights
    node_agg: MLPWeights
    lane_layers: list
    lane_bias: BiasWeights
    fuse_a2l: LayerWeights
    fuse_l2l: LayerWeights
    fuse_l2l_bias: BiasWeights
    fuse_l2a: LayerWeights
    fuse_a2a: LayerWeights
    decoder_heads: list
    registry: ParameterRegistry = field(default_factory=ParameterRegistry)

    def attention(self) -> AttentionConfig:
        return self.cfg.attention()


def _init_mlp(rng, d_in, d_hidden, d_out) -> MLPWeights:
    return MLPWeights(
        w1=Tensor(uniform_init(rng, d_in, (d_in, d_hidden)), requires_grad=True),
        b1=Tensor(np.zeros((1, d_hidden)), requires_grad=True),
        w2=Tensor(uniform_init(rng, d_hidden, (d_hidden, d_out)), requires_grad=True),
        b2=Tensor(np.zeros((1, d_out)), requires_grad=True),
    )


def _register(reg: ParameterRegistry, prefix: str, obj) -> None:
    if isinstance(obj, Tensor):
        reg.add(prefix, obj)
    elif isinstance(obj, (MLPWeights, DecoderHead, LayerWeights, BiasWeights)):
        for name in vars(obj):
            _register(reg, f"{prefix}.{name}", getattr(obj, name))
    elif isinstance(obj, list):
        for i, item in enumerate(obj):
            _register(reg, f"{prefix}{i}", item)
    elif hasattr(obj, "__dict__") or hasattr(obj, "__dataclass_fields__"):
        for name in vars(obj):
            _register(reg, f"{prefix}.{name}", getattr(obj, name))


def init_model(cfg: ModelConfig, seed: int = 0) -> ModelParams:
    rng = np.random.default_rng(seed)
    att = cfg.attention()
    d = cfg.d_model
    c = len(cfg.connection_types)
    params = ModelParams(
        cfg=cfg,
        agent_embed=_init_mlp(rng, N_AGENT_FEATURES, d, d),
        temporal_layers=[init_layer_weights(rng, att) for _ in range(cfg.layers)],
        temporal_agg=_init_mlp(rng, d, d, d),
        interaction=init_layer_weights(rng, att),
        node_embed=_init_mlp(rng, N_MAP_FEATURES, d, d),
        node_agg=_init_mlp(rng, d, d, d),
        lane_layers=[init_layer_weights(rng, att) for _ in range(cfg.layers)],
        lane_bias=init_bias_weights(cfg.heads, c),
        fuse_a2l=init_layer_weights(rng, att),
        fuse_l2l=init_layer_weights(rng, att),
        fuse_l2l_bias=init_bias_weights(cfg.heads, c),
        fuse_l2a=init_layer_weights(rng, att),
        fuse_a2a=init_layer_weights(rng, att),
        decoder_heads=[
            DecoderHead(
                w1=Tensor(uniform_init(rng, d, (d, cfg.decoder_hidden)), requires_grad=True),
                b1=Tensor(np.zeros((1, cfg.decoder_hidden)), requires_grad=True),
                w_offsets=Tensor(uniform_init(rng, cfg.decoder_hidden,
                                              (cfg.decoder_hidden, 2 * cfg.t_future)),
                                 requires_grad=True),
                b_offsets=Tensor(np.zeros((1, 2 * cfg.t_future)), requires_grad=True),
                w_score=Tensor(uniform_init(rng, cfg.decoder_hidden, (cfg.decoder_hidden, 1)),
                               requires_grad=True),
                b_score=Tensor(np.zeros((1, 1)), requires_grad=True),
            )
            for _ in range(cfg.modes)
        ],
    )
    reg = params.registry
    for name in ("agent_embed", "temporal_agg", "interaction", "node_embed", "node_agg",
                 "lane_bias", "fuse_a2l", "fuse_l2l", "fuse_l2l_bias", "fuse_l2a",
                 "fuse_a2a"):
        _register(reg, name, getattr(params, name))
    _register(reg, "temporal", params.temporal_layers)
    _register(reg, "lane", params.lane_layers)
    _register(reg, "decoder", params.decoder_heads)
    return params


# ---------------------------------------------------------------------------
# outputs


@dataclass
class PredictionSet:
    """Final numeric predictions for every target agent.

    trajectories is (N_targets, K, T_future, 2) in meters, agent-centric
    frame; confidences is (N_targets, K), each row non-negative and summing
    to one.
    """

    trajectories: np.ndarray
    confidences: np.ndarray
    target_ids: list

    def __post_init__(self):
        self.trajectories = np.asarray(self.trajectories, dtype=np.float64)
        self.confidences = np.asarray(self.confidences, dtype=np.float64)
        n_t, k = self.confidences.shape
        if self.trajectories.shape[:2] != (n_t, k) or self.trajectories.shape[3] != 2:
            raise ValueError(
                f"trajectories {self.trajectories.shape} inconsistent with "
                f"confidences {self.confidences.shape}")
        if (self.confidences < 0).any():
            raise ValueError("negative mode confidence")
        if not np.allclose(self.confidences.sum(axis=1), 1.0, atol=1e-6):
            raise ValueError("mode confidences must sum to 1 per target")


@dataclass
class ModelOutput:
    """Tensor-valued forward result, differentiable end to end."""

    trajectories: list          # [target][mode] -> Tensor (T_future, 2)
    scores: Tensor              # (N_targets, K) raw
    confidences: Tensor         # (N_targets, K) softmaxed rows
    target_ids: list

    def prediction_set(self) -> PredictionSet:
        stacked = np.stack([
            np.stack([m.data for m in modes]) for modes in self.trajectories])
        return PredictionSet(trajectories=stacked, confidences=self.confidences.data,
                             target_ids=list(self.target_ids))


# ---------------------------------------------------------------------------
# forward stages


def _mlp(x: Tensor, w: MLPWeights) -> Tensor:
    return add(matmul(relu(add(matmul(x, w.w1), w.b1)), w.w2), w.b2)


def hte_forward(params: ModelParams, agent_features: np.ndarray,
                observed: np.ndarray) -> Tensor:
    """History encoder: (N_a, T, 8) tracks to one (N_a, D) feature matrix.

    Each agent is encoded independently: embed steps, run the temporal
    stack with padded steps masked out of the keys, mean-pool the observed
    rows, then a final linear aggregation.
    """
    att = params.attention()
    rows = []
    for i in range(agent_features.shape[0]):
        obs = observed[i]
        if not obs.any():
            raise ValueError(f"empty history for agent {i}")
        x = _mlp(Tensor(agent_features[i]), params.agent_embed)
        mask = np.broadcast_to(obs[None, :], (obs.size, obs.size))
        for lw in params.temporal_layers:
            x = transformer_layer(x, x, lw, att, mask=mask)
        pool = (obs / obs.sum()).astype(np.float64)[None, :]
        pooled = matmul(Tensor(pool), x)
        rows.append(_mlp(pooled, params.temporal_agg))
    return rows[0] if len(rows) == 1 else concat(rows, axis=0)


def ain_forward(params: ModelParams, agent_feats: Tensor) -> Tensor:
    """Agent interaction: one full self-attention block over agent rows."""
    return transformer_layer(agent_feats, agent_feats, params.interaction,
                             params.attention())


def map_net_forward(params: ModelParams, sample: Sample) -> Tensor:
    """Lane encoder plus the topology-biased stack; returns (N_l, D).

    Every biased layer reuses the same composed bias set, so one group of
    bias coefficients serves the whole stack.
    """
    att = params.attention()
    cfg = params.cfg
    rows = []
    for i in range(sample.lane_features.shape[0]):
        x = _mlp(Tensor(sample.lane_features[i]), params.node_embed)
        pool = np.full((1, cfg.n_lane_nodes), 1.0 / cfg.n_lane_nodes)
        rows.append(_mlp(matmul(Tensor(pool), x), params.node_agg))
    lanes = rows[0] if len(rows) == 1 else concat(rows, axis=0)
    biases = compose_bias_matrices(params.lane_bias, sample.topology,
                                   use_relations=cfg.use_relation_bias,
                                   use_reachability=cfg.use_reachability_bias)
    for lw in params.lane_layers:
        lanes = transformer_layer(lanes, lanes, lw, att, biases=biases)
    return lanes


def _local_mask(cfg: ModelConfig, q_pos, k_pos, e: int):
    if not cfg.use_local_attention or e >= len(k_pos):
        return None
    return nearest_neighbor_mask(np.asarray(q_pos), np.asarray(k_pos), e)


def fusion_forward(params: ModelParams, agent_feats: Tensor, lane_feats: Tensor,
                   sample: Sample) -> Tensor:
    """Agent/lane exchange: A2L, biased L2L, L2A, A2A; returns agent rows."""
    att = params.attention()
    cfg = params.cfg
    a_pos, l_pos = sample.agent_positions, sample.lane_positions
    lanes = transformer_layer(lane_feats, agent_feats, params.fuse_a2l, att,
                              mask=_local_mask(cfg, l_pos, a_pos, cfg.e_a2l))
    l2l_bias = compose_bias_matrices(params.fuse_l2l_bias, sample.topology,
                                     use_relations=cfg.use_relation_bias,
                                     use_reachability=cfg.use_reachability_bias)
    lanes = transformer_layer(lanes, lanes, params.fuse_l2l, att, biases=l2l_bias)
    agents = transformer_layer(agent_feats, lanes, params.fuse_l2a, att,
                               mask=_local_mask(cfg, a_pos, l_pos, cfg.e_l2a))
    return transformer_layer(agents, agents, params.fuse_a2a, att,
                             mask=_local_mask(cfg, a_pos, a_pos, cfg.e_a2a))


def decode_trajectories(params: ModelParams, target_feats: Tensor,
                        target_ids: list) -> ModelOutput:
    """K offset-sequence heads per target; offsets accumulate from the origin."""
    cfg = params.cfg
    t_f = cfg.t_future
    n_t = target_feats.shape[0]
    cumsum = Tensor(np.tril(np.ones((t_f, t_f))))
    trajectories = [[] for _ in range(n_t)]
    score_cols = []
    for head in params.decoder_heads:
        hidden = relu(add(matmul(target_feats, head.w1), head.b1))
        offsets = add(matmul(hidden, head.w_offsets), head.b_offsets)
        score_cols.append(add(matmul(hidden, head.w_score), head.b_score))
        for i in range(n_t):
            per_step = reshape(gather_rows(offsets, [i]), (t_f, 2))
            trajectories[i].append(matmul(cumsum, per_step))
    scores = score_cols[0] if len(score_cols) == 1 else concat(score_cols, axis=1)
    return ModelOutput(trajectories=trajectories, scores=scores,
                       confidences=row_softmax(scores), target_ids=list(target_ids))


def model_forward(params: ModelParams, sample: Sample) -> ModelOutput:
    agents = hte_forward(params, sample.agent_features, sample.observed)
    agents = ain_forward(params, agents)
    lanes = map_net_forward(params, sample)
    agents = fusion_forward(params, agents, lanes, sample)
    targets = gather_rows(agents, sample.target_ids)
    return decode_trajectories(params, targets, sample.target_ids)


def predict(params: ModelParams, raw: sc.Scenario) -> PredictionSet:
    """Convenience wrapper: prepare, run, and strip gradients."""
    return model_forward(params, prepare_sample(raw, params.cfg)).prediction_set()
