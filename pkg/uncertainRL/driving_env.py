"""
Deterministic two-lane driving environment.

Coordinates: ``x_lon`` runs along the road from the spawn line, ``x_lat`` is
measured from the left road boundary and grows to the right, so the road
occupies ``0 <= x_lat <= lane_count * lane_width``. Positive yaw and positive
steering turn the vehicle to the right.
"""
import copy
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.special import expit
from sklearn.utils import check_random_state

from .base import (
    BaseConfig,
    ConfigError,
    PreconditionError,
    _check_range,
    parse_key_values,
)

logger = logging.getLogger(__name__)

SCENARIO_DIR = Path(__file__).parent / "scenarios"
SCENARIO_PRESETS = ("a", "b", "c", "straight")
OBSTACLE_KINDS = ("car", "pedestrian")
EGO_FEATURES = ("x_lat", "v_lat", "yaw", "yaw_rate", "v_lon")
OBSTACLE_FEATURES = ("dx_lon", "dx_lat", "dv_lon", "dv_lat")
BOUNDARY_FEATURES = ("gap_left", "gap_right")


@dataclass
class EgoState:
    x_lon: float = 0.0
    x_lat: float = 0.0
    v_lon: float = 0.0
    v_lat: float = 0.0
    yaw: float = 0.0
    yaw_rate: float = 0.0


@dataclass
class Obstacle:
    kind: str
    x_lon: float
    x_lat: float
    v_lon: float = 0.0
    v_lat: float = 0.0
    radius: float = 1.0

    def __post_init__(self):
        if self.kind not in OBSTACLE_KINDS:
            raise ConfigError("obstacle kind must be one of %s" % (OBSTACLE_KINDS,))
        _check_range("obstacle.radius", self.radius, 0.0, closed="right")


@dataclass
class Scenario:
    """
    Road geometry, obstacle layout and goal of one driving task.

    Pedestrians listed here get a fresh lateral velocity every episode, drawn
    uniformly from ``[-pedestrian_speed, pedestrian_speed]`` in file order from
    the episode seed. Cars keep the velocity written in the file.
    """

    name: str
    road_length: float
    lane_width: float
    target_lat: float
    target_lon: float
    ego_spawn: EgoState
    obstacles: list = field(default_factory=list)
    lane_count: int = 2
    pedestrian_speed: float = 0.5

    @property
    def road_width(self):
        return self.lane_count * self.lane_width

    def validate(self, ego_radius=1.0):
        if self.lane_count != 2:
            raise ConfigError("lane_count must be 2, got %r" % self.lane_count)
        _check_range("road_length", self.road_length, 0.0, closed="right")
        _check_range("lane_width", self.lane_width, 0.0, closed="right")
        _check_range("target_lon", self.target_lon, 0.0, self.road_length)
        _check_range("target_lat", self.target_lat, 0.0, self.road_width)
        _check_range("pedestrian_speed", self.pedestrian_speed, 0.0)
        for obstacle in self.obstacles:
            gap = np.hypot(
                obstacle.x_lon - self.ego_spawn.x_lon,
                obstacle.x_lat - self.ego_spawn.x_lat,
            )
            if gap < ego_radius + obstacle.radius:
                raise ConfigError(
                    "%s at (%g, %g) overlaps the ego spawn"
                    % (obstacle.kind, obstacle.x_lon, obstacle.x_lat)
                )
        return self


def load_scenario(path_or_name):
    """Read a scenario file, or a preset by name ("a", "b", "c", "straight").

    Scenario files are ``key = value`` text::

        name = a
        road_length = 100.0
        lane_width = 3.5
        target_lat = 1.75
        target_lon = 90.0
        pedestrian_speed = 0.5
        # x_lon, x_lat, v_lon, v_lat, yaw, yaw_rate
        ego_spawn = [0.0, 5.25, 8.0, 0.0, 0.0, 0.0]
        # kind, x_lon, x_lat, v_lon, v_lat, radius  (repeatable)
        obstacle = ["car", 35.0, 5.25, 0.0, 0.0, 1.0]
    """
    if str(path_or_name) in SCENARIO_PRESETS:
        path = SCENARIO_DIR / ("scenario_%s.txt" % path_or_name)
    else:
        path = Path(path_or_name)
    if not path.exists():
        raise PreconditionError("scenario file not found: %s" % path)

    fields = {"name": path.stem, "obstacles": []}
    for key, value in parse_key_values(path.read_text(encoding="utf-8"), str(path)):
        if key == "obstacle":
            fields["obstacles"].append(Obstacle(*value))
        elif key == "ego_spawn":
            fields["ego_spawn"] = EgoState(*[float(v) for v in value])
        elif key in ("name",):
            fields[key] = str(value)
        elif key == "lane_count":
            fields[key] = int(value)
        elif key in (
            "road_length",
            "lane_width",
            "target_lat",
            "target_lon",
            "pedestrian_speed",
        ):
            fields[key] = float(value)
        else:
            raise ConfigError("%s: unknown scenario key %r" % (path, key))
    try:
        return Scenario(**fields)
    except TypeError as error:
        raise ConfigError("%s: %s" % (path, error)) from None


class EnvConfig(BaseConfig):
    """
    Vehicle, controller and cost parameters of the driving environment.

    Parameters
    ----------
    dt : float, default=0.05
        Control period in seconds (20 Hz).

    K_P, K_I : float, default=1.0, 0.1
        Gains of the longitudinal PI speed controller.

    v_target : float, default=8.0
        Cruise speed the PI controller tracks, m/s.

    w1, w2, w3 : float, default=1.0, 0.05, 0.05
        Weights of the collision, jerk and lane costs. ``w1`` must dominate.

    b : float, default=0.1
        Reward bias.

    collision_length_scale : float, default=5.0
        Length scale of the frontal-risk sigmoid; it is both the inverse
        slope and the midpoint gap.

    side_length_scale : float, default=1.0
        Length scale of the side-risk kernel ``exp(-d^2 / scale^2)``.

    wheelbase : float, default=2.5

    steering_ratio : float, default=0.5
        Road-wheel angle per unit of steering-wheel angle.

    ego_radius : float, default=1.0
        Radius of the ego footprint disc.

    max_steering : float, default=pi/2
        Steering-wheel range; actions outside it are clamped.

    max_episode_steps : int, default=400

    n_nearest : int, default=4
        Number of obstacles described in the observation.
    """

    def __init__(
        self,
        dt=0.05,
        K_P=1.0,
        K_I=0.1,
        v_target=8.0,
        w1=1.0,
        w2=0.05,
        w3=0.05,
        b=0.1,
        collision_length_scale=5.0,
        side_length_scale=1.0,
        wheelbase=2.5,
        steering_ratio=0.5,
        ego_radius=1.0,
        max_steering=np.pi / 2,
        max_episode_steps=400,
        n_nearest=4,
    ):
        self.dt = dt
        self.K_P = K_P
        self.K_I = K_I
        self.v_target = v_target
        self.w1 = w1
        self.w2 = w2
        self.w3 = w3
        self.b = b
        self.collision_length_scale = collision_length_scale
        self.side_length_scale = side_length_scale
        self.wheelbase = wheelbase
        self.steering_ratio = steering_ratio
        self.ego_radius = ego_radius
        self.max_steering = max_steering
        self.max_episode_steps = max_episode_steps
        self.n_nearest = n_nearest

    def _validate_hyperparameters(self):
        _check_range("env.dt", self.dt, 0.0, closed="right")
        _check_range("env.K_P", self.K_P, 0.0)
        _check_range("env.K_I", self.K_I, 0.0)
        _check_range("env.v_target", self.v_target, 0.0)
        for name in ("w1", "w2", "w3"):
            _check_range("env." + name, getattr(self, name), 0.0)
        if self.w1 <= max(self.w2, self.w3):
            raise ConfigError("env.w1 must dominate env.w2 and env.w3")
        _check_range("env.b", self.b)
        for name in (
            "collision_length_scale",
            "side_length_scale",
            "wheelbase",
            "ego_radius",
        ):
            _check_range("env." + name, getattr(self, name), 0.0, closed="right")
        _check_range(
            "env.steering_ratio", self.steering_ratio, 0.0, 1.0, closed="right"
        )
        _check_range(
            "env.max_steering", self.max_steering, 0.0, np.pi / 2, closed="right"
        )
        _check_range("env.max_episode_steps", self.max_episode_steps, 1)
        _check_range("env.n_nearest", self.n_nearest, 0)

    @property
    def observation_size(self):
        return len(EGO_FEATURES) + len(OBSTACLE_FEATURES) * self.n_nearest + 2


@dataclass
class StepResult:
    observation: np.ndarray
    reward: float
    done: bool
    info: dict


def frontal_risk(gap, length_scale):
    """``sig((d0 - gap) / length_scale)`` with ``d0 = length_scale``."""
    return float(expit(1.0 - gap / length_scale))


def side_risk(gaps, length_scale):
    """Largest ``exp(-d^2 / length_scale^2)`` over the lateral gaps."""
    gaps = np.asarray(gaps, dtype=np.float64)
    if gaps.size == 0:
        return 0.0
    return float(np.exp(-((gaps / length_scale) ** 2)).max())


def cost_collision(ego, obstacles, boundaries, config, lane_width):
    """Frontal plus side collision risk.

    The frontal gap is the longitudinal center distance to the nearest
    obstacle ahead whose lateral offset is under half a lane. Side entities
    are the road boundaries and every obstacle overlapping the ego
    longitudinally; their gap is the lateral center distance.
    """
    front_gap = np.inf
    side_gaps = [abs(ego.x_lat - boundary) for boundary in boundaries]
    for obstacle in obstacles:
        dx = obstacle.x_lon - ego.x_lon
        dy = abs(obstacle.x_lat - ego.x_lat)
        if dx > 0.0 and dy < 0.5 * lane_width:
            front_gap = min(front_gap, dx)
        if abs(dx) < config.ego_radius + obstacle.radius:
            side_gaps.append(dy)
    return frontal_risk(front_gap, config.collision_length_scale) + side_risk(
        side_gaps, config.side_length_scale
    )


def cost_jerk(yaw_rate_now, yaw_rate_prev, dt):
    return abs(yaw_rate_now - yaw_rate_prev) / dt


def cost_lane(ego, target_lat):
    return (ego.x_lat - target_lat) ** 2


def base_reward(cost_terms, config):
    """``b - (w1 * C_coll + w2 * C_jerk + w3 * C_lane)``."""
    c_coll, c_jerk, c_lane = cost_terms
    return config.b - (config.w1 * c_coll + config.w2 * c_jerk + config.w3 * c_lane)


def _wrap_angle(angle):
    return (angle + np.pi) % (2.0 * np.pi) - np.pi


class LaneDrivingEnv:
    """
    Kinematic-bicycle ego vehicle on a two-lane road.

    The agent commands the steering-wheel angle only; a PI controller owns
    the longitudinal acceleration.

    Parameters
    ----------
    scenario : Scenario

    config : EnvConfig, default=None
    """

    def __init__(self, scenario, config=None):
        self.config = config if config is not None else EnvConfig()
        self.scenario = scenario.validate(self.config.ego_radius)
        self.ego = None
        self.obstacles = []
        self._integral = 0.0
        self._steps = 0
        self._active = False

    @property
    def observation_size(self):
        return self.config.observation_size

    def observation_scale(self):
        """Typical magnitude of every observation entry, for input scaling."""
        scenario, config = self.scenario, self.config
        ego = [scenario.road_width, 1.0, 1.0, 1.0, max(config.v_target, 1.0)]
        obstacle = [
            0.25 * scenario.road_length,
            scenario.road_width,
            max(config.v_target, 1.0),
            1.0,
        ]
        boundary = [scenario.road_width] * 2
        return np.array(ego + obstacle * config.n_nearest + boundary)

    def reset(self, episode_seed=0, scenario=None):
        """Start an episode; pedestrian velocities come from ``episode_seed``."""
        if scenario is not None:
            self.scenario = scenario.validate(self.config.ego_radius)
        rng = check_random_state(episode_seed)
        self.ego = replace(self.scenario.ego_spawn)
        self.obstacles = copy.deepcopy(self.scenario.obstacles)
        for obstacle in self.obstacles:
            if obstacle.kind == "pedestrian":
                speed = self.scenario.pedestrian_speed
                obstacle.v_lat = float(rng.uniform(-speed, speed))
        self._integral = 0.0
        self._steps = 0
        self._active = True
        return self._observe()

    def step(self, action):
        """Advance one control period with steering-wheel angle ``action``."""
        if not self._active:
            raise PreconditionError("episode is not active; call reset first")
        config, scenario = self.config, self.scenario

        delta = float(np.ravel(action)[0])
        clamped = not (-config.max_steering <= delta <= config.max_steering)
        delta = float(np.clip(delta, -config.max_steering, config.max_steering))

        ego = self.ego
        error = config.v_target - ego.v_lon
        self._integral += error * config.dt
        acc = config.K_P * error + config.K_I * self._integral

        yaw_rate = ego.v_lon * np.tan(config.steering_ratio * delta) / config.wheelbase
        speed = max(np.hypot(ego.v_lon, ego.v_lat) + acc * config.dt, 0.0)
        yaw = _wrap_angle(ego.yaw + yaw_rate * config.dt)
        self.ego = EgoState(
            x_lon=ego.x_lon + ego.v_lon * config.dt,
            x_lat=ego.x_lat + ego.v_lat * config.dt,
            v_lon=speed * np.cos(yaw),
            v_lat=speed * np.sin(yaw),
            yaw=yaw,
            yaw_rate=yaw_rate,
        )
        for obstacle in self.obstacles:
            obstacle.x_lon += obstacle.v_lon * config.dt
            obstacle.x_lat += obstacle.v_lat * config.dt
        self._steps += 1

        boundaries = (0.0, scenario.road_width)
        cost_terms = (
            cost_collision(
                self.ego, self.obstacles, boundaries, config, scenario.lane_width
            ),
            cost_jerk(yaw_rate, ego.yaw_rate, config.dt),
            cost_lane(self.ego, scenario.target_lat),
        )
        reward = base_reward(cost_terms, config)

        collision = any(
            np.hypot(o.x_lon - self.ego.x_lon, o.x_lat - self.ego.x_lat)
            < config.ego_radius + o.radius
            for o in self.obstacles
        )
        out_of_bounds = not (0.0 <= self.ego.x_lat <= scenario.road_width)
        reached_goal = self.ego.x_lon >= scenario.target_lon
        truncated = self._steps >= config.max_episode_steps
        done = collision or out_of_bounds or reached_goal or truncated
        self._active = not done
        if done:
            logger.debug(
                "episode ended after %d steps: collision=%s out_of_bounds=%s goal=%s",
                self._steps,
                collision,
                out_of_bounds,
                reached_goal,
            )

        info = {
            "collision": collision,
            "out_of_bounds": out_of_bounds,
            "reached_goal": reached_goal,
            "truncated": truncated,
            "action_clamped": clamped,
            "cost_terms": cost_terms,
        }
        return StepResult(self._observe(), float(reward), done, info)

    def _observe(self):
        ego, config = self.ego, self.config
        features = [ego.x_lat, ego.v_lat, ego.yaw, ego.yaw_rate, ego.v_lon]

        distances = [
            np.hypot(o.x_lon - ego.x_lon, o.x_lat - ego.x_lat) for o in self.obstacles
        ]
        nearest = np.argsort(distances, kind="stable")[: config.n_nearest]
        block = np.zeros((config.n_nearest, len(OBSTACLE_FEATURES)))
        for row, index in enumerate(nearest):
            o = self.obstacles[index]
            block[row] = (
                o.x_lon - ego.x_lon,
                o.x_lat - ego.x_lat,
                o.v_lon - ego.v_lon,
                o.v_lat - ego.v_lat,
            )
        boundary = [ego.x_lat, self.scenario.road_width - ego.x_lat]
        return np.concatenate([features, block.ravel(), boundary])
