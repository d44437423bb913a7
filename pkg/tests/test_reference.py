import numpy as np
import pytest

from aspinn import reference as ref
from aspinn.reference import GridSolution, ReferenceError


@pytest.fixture(scope="module")
def slit_coarse():
    return ref.fd_poisson_slit(65)


def riemann(ul, ur, x0=0.0):
    return lambda x: np.where(x < x0, ul, ur).astype(float)


class TestFdPoissonSlit:
    def test_symmetric_about_axis(self, slit_coarse):
        u = slit_coarse.values
        assert np.max(np.abs(u - u[:, ::-1])) < 1e-10

    def test_zero_on_slit_and_boundary(self, slit_coarse):
        u = slit_coarse.values
        x, y = slit_coarse.axes
        assert np.all(u[0, :] == 0) and np.all(u[-1, :] == 0)
        assert np.all(u[:, 0] == 0) and np.all(u[:, -1] == 0)
        mid = len(y) // 2
        assert y[mid] == 0.0
        on_slit = x >= 0
        assert np.all(u[on_slit, mid] == 0)
        assert not slit_coarse.mask[on_slit & (x <= 1), mid].any()

    def test_positive_inside(self, slit_coarse):
        u = slit_coarse.values
        x, y = slit_coarse.axes
        inner = u[1:-1, 1:-1]
        free = slit_coarse.mask[1:-1, 1:-1]
        assert np.all(inner[free] > 0)

    def test_rejects_even_or_small(self):
        with pytest.raises(ReferenceError):
            ref.fd_poisson_slit(64)
        with pytest.raises(ReferenceError):
            ref.fd_poisson_slit(15)

    def test_second_order_on_manufactured_problem(self):
        # -lap u = 2 pi^2 sin(pi x) sin(pi y) has u = sin(pi x) sin(pi y) on [-1, 1]^2
        def source(X, Y):
            return 2 * np.pi**2 * np.sin(np.pi * X) * np.sin(np.pi * Y)

        errors = []
        for n in (17, 33, 65):
            sol = ref._fd_poisson(n, source, slit=False)
            X, Y = np.meshgrid(*sol.axes, indexing="ij")
            errors.append(np.max(np.abs(sol.values - np.sin(np.pi * X) * np.sin(np.pi * Y))))
        ratios = np.array(errors[:-1]) / np.array(errors[1:])
        assert np.all(np.abs(ratios - 4) < 0.3), ratios


class TestGodunov:
    def test_shock_speed(self):
        nx = 1000
        sol = ref.godunov_burgers(nx=nx, T=0.4, u0=riemann(1.0, 0.0), times=[0.4])
        x, u = sol.axes[0], sol.values[:, 0]
        dx = x[1] - x[0]
        # the jump is where the profile crosses 1/2 to the right of the left-boundary fan
        right = x > -0.5
        crossing = x[right][np.argmax(u[right] < 0.5)]
        assert abs(crossing - 0.2) <= dx

    def test_rarefaction_fan(self):
        t = 0.3
        sol = ref.godunov_burgers(nx=2000, T=t, u0=riemann(0.0, 1.0), times=[t])
        x, u = sol.axes[0], sol.values[:, 0]
        fan = (x > 0.05) & (x < t - 0.05)
        assert np.max(np.abs(u[fan] - x[fan] / t)) < 1e-2
        assert np.all(np.abs(u[(x < -0.05) & (x > -0.5)]) < 1e-12)

    def test_zero_data_stays_zero(self):
        sol = ref.godunov_burgers(nx=200, T=0.5, u0=lambda x: np.zeros_like(x))
        assert np.all(sol.values == 0)

    def test_conservation_per_step(self):
        rng = np.random.default_rng(0)
        u = rng.uniform(-1, 1, 300)
        dx = 2 / 300
        for _ in range(50):
            dt = 0.5 * dx / np.max(np.abs(u))
            new, f_left, f_right = ref.godunov_step(u, dt, dx)
            change = np.sum(new - u) * dx
            assert abs(change + dt * (f_right - f_left)) < 1e-10
            u = new

    def test_max_principle(self):
        rng = np.random.default_rng(3)
        coeffs = rng.normal(size=5)

        def u0(x):
            return sum(c * np.sin((k + 1) * np.pi * x) for k, c in enumerate(coeffs))

        sol = ref.godunov_burgers(nx=400, T=0.6, u0=u0)
        first = sol.values[:, 0]
        assert sol.values.max() <= first.max() + 1e-12
        assert sol.values.min() >= first.min() - 1e-12

    def test_snapshots_at_requested_times(self):
        sol = ref.godunov_burgers(nx=200, T=0.6, times=[0.0, 0.3, 0.6])
        assert np.array_equal(sol.axes[1], [0.0, 0.3, 0.6])
        assert sol.time_horizon == 0.6

    def test_invalid_inputs(self):
        with pytest.raises(ReferenceError):
            ref.godunov_burgers(nx=50)
        with pytest.raises(ReferenceError):
            ref.godunov_burgers(cfl=1.0)


class TestResample:
    def linear_grid(self):
        x = np.linspace(-1, 1, 11)
        y = np.linspace(0, 2, 21)
        X, Y = np.meshgrid(x, y, indexing="ij")
        return GridSolution((x, y), 2 * X + 3 * Y, np.ones_like(X, dtype=bool))

    def test_exact_at_nodes(self):
        g = self.linear_grid()
        assert np.array_equal(ref.resample(g, g.points()), g.values.reshape(-1))

    def test_linear_field_exact(self):
        g = self.linear_grid()
        rng = np.random.default_rng(0)
        pts = np.column_stack([rng.uniform(-1, 1, 100), rng.uniform(0, 2, 100)])
        assert np.allclose(ref.resample(g, pts), 2 * pts[:, 0] + 3 * pts[:, 1], rtol=0, atol=1e-12)

    def test_masked_region_raises(self, slit_coarse):
        with pytest.raises(ReferenceError, match="0.5"):
            ref.resample(slit_coarse, [[0.5, 0.0]])
        with pytest.raises(ReferenceError, match="0.5"):
            ref.resample(slit_coarse, [[0.5, 1e-3]])
        assert ref.resample(slit_coarse, [[-0.5, 0.0]])[0] > 0

    def test_outside_raises(self):
        with pytest.raises(ReferenceError, match="outside"):
            ref.resample(self.linear_grid(), [[1.5, 0.0]])

    def test_slice(self):
        sol = ref.godunov_burgers(nx=200, T=0.6, times=[0.0, 0.6])
        x, u = ref.slice_at(sol, 0.0)
        assert np.array_equal(u, sol.values[:, 0])


class TestCsv:
    def test_round_trip_with_mask(self, tmp_path, slit_coarse):
        path = tmp_path / "ref.csv"
        ref.write_reference_csv(slit_coarse, str(path))
        back = ref.read_reference_csv(str(path))
        assert np.array_equal(back.mask, slit_coarse.mask)
        assert np.array_equal(back.values[back.mask], slit_coarse.values[slit_coarse.mask])
        for a, b in zip(back.axes, slit_coarse.axes):
            assert np.array_equal(a, b)
        assert path.read_text().startswith("# ref d=2 nx=65 ny=65")

    def test_round_trip_spacetime(self, tmp_path):
        sol = ref.godunov_burgers(nx=100, T=0.6, times=[0.0, 0.3, 0.6])
        path = tmp_path / "burgers.csv"
        ref.write_reference_csv(sol, str(path))
        back = ref.read_reference_csv(str(path))
        assert back.time_horizon == 0.6
        assert np.array_equal(back.values, sol.values)

    def test_bad_header(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("x,value\n0,1\n")
        with pytest.raises(ReferenceError, match="header"):
            ref.read_reference_csv(str(path))
