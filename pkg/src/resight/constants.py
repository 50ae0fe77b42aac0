"""Central tunables for the matching and feedback machinery.

Every functional-form choice that is a calibration knob rather than a
hard contract lives here, so the whole reconstruction is auditable in
one place. Workflow documents may override the matcher values per
species; these are the shipped defaults.
"""

# ---------------------------------------------------------------------------
# Multiscale differential descriptors

DESCRIPTOR_SCALES = (1.0, 2.0, 4.0)   # Gaussian sigmas, px
KERNEL_TRUNCATE = 3.0                 # kernel radius = ceil(TRUNCATE * sigma)

# ---------------------------------------------------------------------------
# Patch extraction

PATCH_HALF_WIDTH = 24                 # patch is (2h+1) x (2h+1) at a fiducial

# ---------------------------------------------------------------------------
# Nonrigid alignment

ALIGN_LEVELS = 3                      # coarse-to-fine pyramid depth
ALIGN_ITERS = 8                       # update iterations per level
ALIGN_SMOOTHNESS = 1.5                # Gaussian sigma smoothing each increment
ALIGN_STEP_CLIP = 0.45                # max |increment| px (invertibility guard)
ALIGN_MIN_LEVEL_SIZE = 12             # stop coarsening below this many px

# Deformation-based pair score: exp(-alpha * divergence - beta * residual)
DEFORMATION_ALPHA = 4.0
DEFORMATION_BETA = 1.0

# ---------------------------------------------------------------------------
# Correspondence / RANSAC

RANSAC_ITERS = 200
RANSAC_INLIER_TOL_PX = 2.0
RANSAC_MIN_INLIERS = 3
RANSAC_OUTER_ROUNDS = 5               # correspondence <-> refit alternations
RANSAC_GATE_FACTOR = 3.0              # gate radius = factor * inlier tolerance
RANSAC_MAX_SCALE = 4.0                # singular-value bound on candidate fits

# ---------------------------------------------------------------------------
# Shallow pair CNN (divergence map + brightness-error map -> same/different)

CNN_INPUT_SIZE = 32
CNN_CHANNELS = 8
CNN_KERNEL = 3

# ---------------------------------------------------------------------------
# Ensemble

HEDGE_ETA = 0.5                       # multiplicative-weights learning rate
WEIGHT_FLOOR = 1e-6                   # simplex floor after every update
BAG_FRACTION = 2.0 / 3.0              # fiducial subset size for bagging
DEFAULT_CASCADE = (("descriptor_cosine", 0.2), ("deformation", 1.0))

# ---------------------------------------------------------------------------
# Verification / quality control

TASK_REDUNDANCY = 3                   # accepted responses per task
CONSENSUS_WEIGHT = 0.7                # early-resolve weight fraction
GOLD_CADENCE = 10                     # every k-th answered task is gold
RELIABILITY_PRIOR = (2.0, 1.0)        # Beta(a, b) prior on correctness
DEACTIVATE_BELOW = 0.6                # reliability threshold ...
DEACTIVATE_MIN_GOLD = 5               # ... once this many golds were seen

# ---------------------------------------------------------------------------
# Work distribution

LEASE_TTL_SECONDS = 300.0
