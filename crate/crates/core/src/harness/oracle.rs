//! Single-fluid barotropic Lagrangian solver used as a reference when both
//! exponents coincide. With `(R₀+Q₀)τ₀ = 1` the pressure is `τ^{−γ}`, so no
//! closure is involved. Deliberately shares no code with [`crate::solver`].

/// Mass-coordinate state of the barotropic gas.
#[derive(Debug, Clone, PartialEq)]
pub struct Barotropic {
    pub gamma: f64,
    pub mu: f64,
    pub dy: f64,
    pub tau: Vec<f64>,
    pub u: Vec<f64>,
}

impl Barotropic {
    pub fn new(gamma: f64, mu: f64, tau: Vec<f64>, u: Vec<f64>) -> Self {
        let dy = 1.0 / tau.len() as f64;
        Self { gamma, mu, dy, tau, u }
    }

    /// One step: explicit volume update, then backward-Euler viscosity with
    /// the pressure gradient at the new volume.
    pub fn advance(&mut self, dt: f64) {
        let n = self.tau.len();
        let dy = self.dy;
        for i in 0..n {
            self.tau[i] += dt * (self.u[i + 1] - self.u[i]) / dy;
        }
        let p: Vec<f64> = self.tau.iter().map(|t| t.powf(-self.gamma)).collect();
        let k: Vec<f64> = self.tau.iter().map(|t| self.mu * dt / (dy * dy * t)).collect();

        // Rows for nodes 1..n-1 as (sub, diag, sup, rhs).
        let m = n - 1;
        let mut sub = vec![0.0; m];
        let mut diag = vec![0.0; m];
        let mut sup = vec![0.0; m];
        let mut rhs = vec![0.0; m];
        for r in 0..m {
            let j = r + 1;
            sub[r] = -k[j - 1];
            diag[r] = 1.0 + k[j - 1] + k[j];
            sup[r] = -k[j];
            rhs[r] = self.u[j] - dt * (p[j] - p[j - 1]) / dy;
        }
        // Forward sweep with normalised super-diagonal.
        let mut c = vec![0.0; m];
        let mut d = vec![0.0; m];
        c[0] = sup[0] / diag[0];
        d[0] = rhs[0] / diag[0];
        for r in 1..m {
            let den = diag[r] - sub[r] * c[r - 1];
            c[r] = sup[r] / den;
            d[r] = (rhs[r] - sub[r] * d[r - 1]) / den;
        }
        self.u[m] = d[m - 1];
        for r in (0..m - 1).rev() {
            self.u[r + 1] = d[r] - c[r] * self.u[r + 2];
        }
        self.u[0] = 0.0;
        self.u[n] = 0.0;
    }
}
