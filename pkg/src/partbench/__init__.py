"""Planar articulated-object part discovery: simulator, metrics, and harness."""

from .assets import (
    BenchmarkSet,
    InstanceInit,
    JointSpec,
    LinkSpec,
    ObjectSpec,
    build_benchmark,
    generate_background,
    generate_multilink,
    load_benchmark,
    sample_instance_init,
    save_benchmark,
)
from .geometry import FRAME_SIZE, Pose2
from .harness import (
    EpisodeRecord,
    RunConfig,
    load_episode,
    persist_episode,
    run_benchmark,
    run_episode,
    write_report,
)
from .memory import (
    A_MIN,
    N_CHANNELS,
    PartMemory,
    UpdateCase,
    apply_update,
    classify_update,
    flatten,
    icp_se2,
    transform_mask,
)
from .metrics import (
    BenchmarkReport,
    aggregate,
    ape,
    classify_step,
    hausdorff95,
    hungarian,
    part_iou,
)
from .perception import (
    CorruptionModel,
    MotionMaskPair,
    corrupt_masks,
    encode_hold,
    encode_push,
    motion_masks_from_flow,
)
from .policies import (
    OracleContext,
    PolicyInput,
    no_hold_random_policy,
    oracle_policy,
    random_policy,
    remote_policy,
)
from .reward import RewardTarget, RewardVariant, StepContext, compute_reward
from .sim import (
    Action,
    FlowField,
    StepOutcome,
    TouchReading,
    WorldState,
    compute_flow,
    render,
    step,
    worldstate_from_init,
)

__version__ = "0.1.0"
