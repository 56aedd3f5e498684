from .pose import (
    Pose,
    compose,
    exp_so3,
    geodesic_deg,
    identity,
    look_at,
    perturb,
    sample_view_sphere,
    skew,
)
from .camera import Camera, Ray, default_camera, generate_ray, object_rays
from .model import (
    ObjectModel,
    blend_colours,
    checker_colour,
    gradient_colour,
    icosphere,
    make_blob,
    make_cube,
    make_cylinder,
    make_object,
    make_sphere,
    nocs,
    nocs_inverse,
    noise_colour,
    uniform_colour,
)
from .raycast import Hit, raycast, raycast_batch
from .oracle import (
    DEFAULT_LIGHT,
    FLAT_LIGHT,
    Light,
    OracleRender,
    flat_render,
    jitter_light,
    project_centre,
    render_oracle,
    shade,
)
from . import io
