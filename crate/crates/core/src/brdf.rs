//! Parametric reflectance models and hemispherical radiance integration.
//!
//! Directions live in the local frame of a horizontal surface: `theta` is the
//! polar angle from the surface normal (+z) and `phi` the azimuth.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Direction {
    theta: f64,
    phi: f64,
}

impl Direction {
    /// `theta` must lie in `[0, pi/2]`; `phi` is wrapped into `[0, 2pi)`.
    pub fn new(theta: f64, phi: f64) -> Result<Self> {
        if !(0.0..=FRAC_PI_2).contains(&theta) || !phi.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "direction theta {theta} outside the upper hemisphere"
            )));
        }
        Ok(Direction {
            theta,
            phi: phi.rem_euclid(TAU),
        })
    }

    pub fn from_degrees(theta: f64, phi: f64) -> Result<Self> {
        Self::new(theta.to_radians(), phi.to_radians())
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }

    pub fn to_vector(&self) -> [f64; 3] {
        let s = self.theta.sin();
        [s * self.phi.cos(), s * self.phi.sin(), self.theta.cos()]
    }

    pub fn cos_theta(&self) -> f64 {
        self.theta.cos()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BrdfKind {
    Lambertian,
    /// Diffuse base plus one normalized Phong lobe around the mirror direction.
    PhongSpecular,
    /// Diffuse base plus a sharp and a broad Phong lobe sharing `ks` equally.
    TwoLobe,
}

impl BrdfKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            BrdfKind::Lambertian => "lambertian",
            BrdfKind::PhongSpecular => "phong",
            BrdfKind::TwoLobe => "two-lobe",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BrdfModel {
    pub class_id: u16,
    pub name: String,
    pub kind: BrdfKind,
    /// Diffuse albedo in `[0, 1]`.
    pub albedo: f64,
    pub specular_strength: f64,
    /// Phong exponent, `>= 1`.
    pub shininess: f64,
}

impl BrdfModel {
    pub fn lambertian(class_id: u16, name: &str, albedo: f64) -> Self {
        BrdfModel {
            class_id,
            name: name.to_owned(),
            kind: BrdfKind::Lambertian,
            albedo,
            specular_strength: 0.0,
            shininess: 1.0,
        }
    }

    pub fn phong(class_id: u16, name: &str, albedo: f64, ks: f64, n: f64) -> Self {
        BrdfModel {
            class_id,
            name: name.to_owned(),
            kind: BrdfKind::PhongSpecular,
            albedo,
            specular_strength: ks,
            shininess: n,
        }
    }

    pub fn two_lobe(class_id: u16, name: &str, albedo: f64, ks: f64, n: f64) -> Self {
        BrdfModel {
            class_id,
            name: name.to_owned(),
            kind: BrdfKind::TwoLobe,
            albedo,
            specular_strength: ks,
            shininess: n,
        }
    }

    /// Parameter ranges plus energy conservation (`albedo + ks <= 1`).
    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..=1.0).contains(&self.albedo)
            && self.specular_strength >= 0.0
            && self.shininess >= 1.0
            && self.albedo + self.specular_strength <= 1.0 + 1e-12;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "BRDF parameters out of range for class {}: {self:?}",
                self.class_id
            )))
        }
    }

    fn lobes(&self) -> &'static [(f64, f64)] {
        // (weight, exponent scale)
        match self.kind {
            BrdfKind::Lambertian => &[],
            BrdfKind::PhongSpecular => &[(1.0, 1.0)],
            BrdfKind::TwoLobe => &[(0.5, 1.0), (0.5, 0.25)],
        }
    }

    fn exponent(&self, scale: f64) -> f64 {
        (self.shininess * scale).max(1.0)
    }

    /// Reflectance `f(l, v)`.
    pub fn eval(&self, l: &Direction, v: &Direction) -> f64 {
        let diffuse = self.albedo / PI;
        if self.kind == BrdfKind::Lambertian || self.specular_strength == 0.0 {
            return diffuse;
        }
        let lv = l.to_vector();
        let vv = v.to_vector();
        // mirror of l about the normal, dotted with v; symmetric in l and v
        let cos_alpha = (-lv[0] * vv[0] - lv[1] * vv[1] + lv[2] * vv[2]).max(0.0);
        let spec: f64 = self
            .lobes()
            .iter()
            .map(|&(w, s)| {
                let n = self.exponent(s);
                w * (n + 2.0) / TAU * cos_alpha.powf(n)
            })
            .sum();
        diffuse + self.specular_strength * spec
    }

    /// Largest value `eval` can take (at the mirror direction).
    pub fn peak(&self) -> f64 {
        let spec: f64 = self
            .lobes()
            .iter()
            .map(|&(w, s)| w * (self.exponent(s) + 2.0) / TAU)
            .sum();
        self.albedo / PI + self.specular_strength * spec
    }
}

pub fn eval_brdf(model: &BrdfModel, l: &Direction, v: &Direction) -> f64 {
    model.eval(l, v)
}

/// Reflected radiance toward `v` under `illumination`, by the midpoint rule
/// on a `theta_steps` × `phi_steps` grid over the upper hemisphere:
/// `∫∫ f(l, v) L(l) cos(theta) sin(theta) dtheta dphi`.
pub fn integrate_radiance<F>(
    model: &BrdfModel,
    illumination: F,
    v: &Direction,
    theta_steps: usize,
    phi_steps: usize,
) -> Result<f64>
where
    F: Fn(&Direction) -> f64,
{
    if theta_steps < 16 || phi_steps < 32 {
        return Err(Error::InvalidArgument(format!(
            "quadrature grid {theta_steps}x{phi_steps} below the 16x32 minimum"
        )));
    }
    let dt = FRAC_PI_2 / theta_steps as f64;
    let dp = TAU / phi_steps as f64;
    let mut total = 0.0;
    for i in 0..theta_steps {
        let theta = (i as f64 + 0.5) * dt;
        let jac = theta.cos() * theta.sin();
        let mut ring = 0.0;
        for j in 0..phi_steps {
            let l = Direction {
                theta,
                phi: (j as f64 + 0.5) * dp,
            };
            let radiance = illumination(&l);
            if radiance != 0.0 {
                ring += model.eval(&l, v) * radiance;
            }
        }
        total += ring * jac;
    }
    Ok(total * dt * dp)
}

/// Ten reference materials with mixed reflectance kinds. The first `k` are used
/// when a scene asks for `k` classes.
pub fn default_material_table(k: usize) -> Result<Vec<BrdfModel>> {
    let all = [
        BrdfModel::lambertian(0, "asphalt", 0.20),
        BrdfModel::lambertian(1, "concrete", 0.50),
        BrdfModel::phong(2, "glass", 0.08, 0.05, 40.0),
        BrdfModel::lambertian(3, "tree", 0.12),
        BrdfModel::two_lobe(4, "grass", 0.18, 0.10, 6.0),
        BrdfModel::phong(5, "metal", 0.15, 0.25, 6.0),
        BrdfModel::two_lobe(6, "ceramic", 0.35, 0.15, 16.0),
        BrdfModel::phong(7, "solar-panel", 0.05, 0.10, 20.0),
        BrdfModel::phong(8, "water", 0.04, 0.035, 60.0),
        BrdfModel::lambertian(9, "polymer", 0.70),
    ];
    if k == 0 || k > all.len() {
        return Err(Error::Config(format!(
            "default material table provides 1..={} classes, asked for {k}",
            all.len()
        )));
    }
    Ok(all[..k].to_vec())
}
