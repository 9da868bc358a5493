"""Names and dims of every weight tensor the networks read.

The transforms are described as layer plans; each entry names a layer and its
kind, and the layout functions expand the plans into tensor names.
"""

from .const import CONTEXT_KERNEL, TRANSFORM_KERNEL

ATTENTION_BLOCKS = 3

ANALYSIS_PLAN = (
    {"name": "g_a.0", "kind": "down", "gdn": True},
    {"name": "g_a.1", "kind": "crm"},
    {"name": "g_a.2", "kind": "attention"},
    {"name": "g_a.3", "kind": "down", "gdn": True},
    {"name": "g_a.4", "kind": "crm"},
    {"name": "g_a.5", "kind": "down", "gdn": True},
    {"name": "g_a.6", "kind": "crm"},
    {"name": "g_a.7", "kind": "attention"},
    {"name": "g_a.8", "kind": "down", "gdn": False},
)

SYNTHESIS_PLAN = (
    {"name": "g_s.0", "kind": "up", "gdn": True},
    {"name": "g_s.1", "kind": "crm"},
    {"name": "g_s.2", "kind": "attention"},
    {"name": "g_s.3", "kind": "up", "gdn": True},
    {"name": "g_s.4", "kind": "crm"},
    {"name": "g_s.5", "kind": "up", "gdn": True},
    {"name": "g_s.6", "kind": "crm"},
    {"name": "g_s.7", "kind": "attention"},
    {"name": "g_s.8", "kind": "up", "gdn": False},
)

# The hyper networks have no activation on their last layer.
HYPER_ANALYSIS_PLAN = (
    {"name": "h_a.0", "kind": "down", "activation": True},
    {"name": "h_a.1", "kind": "down", "activation": False},
)

HYPER_SYNTHESIS_PLAN = (
    {"name": "h_s.0", "kind": "up", "activation": True},
    {"name": "h_s.1", "kind": "up", "activation": False},
)

CONTEXT_NAME = "ctx"
HEAD_NAMES = ("ep.0", "ep.1", "ep.2")
FACTORIZED_NAME = "factorized.logits"


def conv_layout(name, out_ch, in_ch, kernel):
    return {
        f"{name}.weight": (out_ch, in_ch, kernel, kernel),
        f"{name}.bias": (out_ch,),
    }


def gdn_layout(name, channels):
    return {
        f"{name}.beta": (channels,),
        f"{name}.gamma": (channels, channels),
    }


def residual_block_layout(name, channels):
    layout = conv_layout(f"{name}.conv1", channels, channels, TRANSFORM_KERNEL)
    layout.update(conv_layout(f"{name}.conv2", channels, channels, TRANSFORM_KERNEL))
    return layout


def crm_layout(name, channels, stages):
    layout = {}
    for index in range(stages):
        layout.update(residual_block_layout(f"{name}.block{index}", channels))
    return layout


def attention_layout(name, channels):
    layout = {}
    for branch in ("trunk", "mask"):
        for index in range(ATTENTION_BLOCKS):
            layout.update(residual_block_layout(f"{name}.{branch}.block{index}", channels))
        layout.update(conv_layout(f"{name}.{branch}.out", channels, channels, 1))
    return layout


def transform_layout(plan, in_ch, width, out_ch, stages):
    layout = {}
    sampling = [entry for entry in plan if entry["kind"] in ("down", "up")]
    for entry in plan:
        name = entry["name"]
        if entry["kind"] in ("down", "up"):
            src = in_ch if entry is sampling[0] else width
            dst = out_ch if entry is sampling[-1] else width
            layout.update(conv_layout(name, dst, src, TRANSFORM_KERNEL))
            if entry.get("gdn"):
                layout.update(gdn_layout(f"{name}.gdn", dst))
        elif entry["kind"] == "crm":
            layout.update(crm_layout(name, width, stages))
        elif entry["kind"] == "attention":
            layout.update(attention_layout(name, width))
    return layout


def head_widths(cfg):
    """Channel widths of the entropy-parameter head, input to output."""
    width = 4 * cfg.latent_channels
    return (width, width, width, cfg.head_channels)


def weight_layout(cfg):
    """Return an ordered map of every tensor name to its dims."""
    c_y = cfg.latent_channels
    c_z = cfg.hyper_channels

    layout = {}
    layout.update(transform_layout(ANALYSIS_PLAN, 3, c_y, c_y, cfg.crm_stages))
    layout.update(transform_layout(SYNTHESIS_PLAN, c_y, c_y, 3, cfg.crm_stages))
    layout.update(transform_layout(HYPER_ANALYSIS_PLAN, c_y, c_z, c_z, cfg.crm_stages))
    layout.update(transform_layout(HYPER_SYNTHESIS_PLAN, c_z, c_z, 2 * c_y, cfg.crm_stages))
    layout.update(conv_layout(CONTEXT_NAME, 2 * c_y, c_y, CONTEXT_KERNEL))

    widths = head_widths(cfg)
    for index, name in enumerate(HEAD_NAMES):
        layout.update(conv_layout(name, widths[index + 1], widths[index], 1))

    z_min, z_max = cfg.z_alphabet
    layout[FACTORIZED_NAME] = (c_z, z_max - z_min + 1)
    return layout


def parameter_count(cfg, prefix=None):
    """Count parameters of the whole model, or of the layers under prefix."""
    total = 0
    for name, dims in weight_layout(cfg).items():
        if prefix is not None and not name.startswith(f"{prefix}."):
            continue
        count = 1
        for dim in dims:
            count *= dim
        total += count
    return total
