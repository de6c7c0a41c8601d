//! Irish Transverse Mercator (EPSG:2157) ⇄ WGS84 geographic coordinates.
//!
//! Uses the Krüger series to sixth order in the third flattening `n`, which
//! is accurate to well under a millimeter within a few degrees of the
//! central meridian. ETRS89 and WGS84 are treated as identical.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeodesyError {
    #[error("ITM coordinate ({easting}, {northing}) outside [0, 1200000] x [0, 1500000]")]
    ItmOutOfDomain { easting: f64, northing: f64 },
    #[error("geographic coordinate (lat {latitude}, lon {longitude}) outside lat (45, 60), lon (-15, 0)")]
    GeoOutOfDomain { latitude: f64, longitude: f64 },
    #[error("invalid projection parameters: {0}")]
    InvalidProjection(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ItmCoord {
    pub easting: f64,
    pub northing: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoCoord {
    /// Degrees, positive north.
    pub latitude: f64,
    /// Degrees, positive east.
    pub longitude: f64,
}

impl ItmCoord {
    pub fn new(easting: f64, northing: f64) -> Self {
        Self { easting, northing }
    }

    fn in_domain(&self) -> bool {
        self.easting.is_finite()
            && self.northing.is_finite()
            && (0.0..=1_200_000.0).contains(&self.easting)
            && (0.0..=1_500_000.0).contains(&self.northing)
    }
}

impl GeoCoord {
    pub fn new(latitude: f64, longitude: f64) -> Self {
        Self {
            latitude,
            longitude,
        }
    }

    fn in_domain(&self) -> bool {
        self.latitude > 45.0
            && self.latitude < 60.0
            && self.longitude > -15.0
            && self.longitude < 0.0
    }
}

/// Transverse Mercator projection on an ellipsoid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TmProjection {
    pub semi_major_axis: f64,
    pub inverse_flattening: f64,
    pub lat_origin: f64,
    pub lon_origin: f64,
    pub scale_factor: f64,
    pub false_easting: f64,
    pub false_northing: f64,
}

impl Default for TmProjection {
    fn default() -> Self {
        Self::itm()
    }
}

impl TmProjection {
    /// EPSG:2157 on GRS80.
    pub fn itm() -> Self {
        Self {
            semi_major_axis: 6_378_137.0,
            inverse_flattening: 298.257_222_101,
            lat_origin: 53.5,
            lon_origin: -8.0,
            scale_factor: 0.999_82,
            false_easting: 600_000.0,
            false_northing: 750_000.0,
        }
    }

    pub fn validate(&self) -> Result<(), GeodesyError> {
        if !(self.scale_factor > 0.9 && self.scale_factor < 1.1) {
            return Err(GeodesyError::InvalidProjection(format!(
                "scale_factor {} not in (0.9, 1.1)",
                self.scale_factor
            )));
        }
        if self.inverse_flattening.is_nan()
            || self.inverse_flattening <= 0.0
            || self.semi_major_axis.is_nan()
            || self.semi_major_axis <= 0.0
        {
            return Err(GeodesyError::InvalidProjection(
                "ellipsoid axes must be positive".into(),
            ));
        }
        Ok(())
    }

    fn series(&self) -> Series {
        Series::new(self)
    }

    pub fn forward(&self, coord: GeoCoord) -> Result<ItmCoord, GeodesyError> {
        wgs84_to_itm(coord, self)
    }

    pub fn inverse(&self, coord: ItmCoord) -> Result<GeoCoord, GeodesyError> {
        itm_to_wgs84(coord, self)
    }
}

/// Precomputed Krüger coefficients for one projection.
struct Series {
    e: f64,
    /// Rectifying radius times the scale factor.
    k0a: f64,
    alpha: [f64; 6],
    beta: [f64; 6],
    /// Conformal → geodetic latitude coefficients.
    delta: [f64; 6],
    /// Northing of the latitude of origin on the central meridian, before false northing.
    y0: f64,
    lon0: f64,
}

impl Series {
    fn new(p: &TmProjection) -> Self {
        let f = 1.0 / p.inverse_flattening;
        let e2 = f * (2.0 - f);
        let n = f / (2.0 - f);
        let (n2, n3, n4, n5, n6) = (n * n, n.powi(3), n.powi(4), n.powi(5), n.powi(6));
        let a_rect = p.semi_major_axis / (1.0 + n) * (1.0 + n2 / 4.0 + n4 / 64.0 + n6 / 256.0);
        let alpha = [
            n / 2.0 - 2.0 * n2 / 3.0 + 5.0 * n3 / 16.0 + 41.0 * n4 / 180.0 - 127.0 * n5 / 288.0
                + 7891.0 * n6 / 37800.0,
            13.0 * n2 / 48.0 - 3.0 * n3 / 5.0 + 557.0 * n4 / 1440.0 + 281.0 * n5 / 630.0
                - 1983433.0 * n6 / 1935360.0,
            61.0 * n3 / 240.0 - 103.0 * n4 / 140.0
                + 15061.0 * n5 / 26880.0
                + 167603.0 * n6 / 181440.0,
            49561.0 * n4 / 161280.0 - 179.0 * n5 / 168.0 + 6601661.0 * n6 / 7257600.0,
            34729.0 * n5 / 80640.0 - 3418889.0 * n6 / 1995840.0,
            212378941.0 * n6 / 319334400.0,
        ];
        let beta = [
            n / 2.0 - 2.0 * n2 / 3.0 + 37.0 * n3 / 96.0 - n4 / 360.0 - 81.0 * n5 / 512.0
                + 96199.0 * n6 / 604800.0,
            n2 / 48.0 + n3 / 15.0 - 437.0 * n4 / 1440.0 + 46.0 * n5 / 105.0
                - 1118711.0 * n6 / 3870720.0,
            17.0 * n3 / 480.0 - 37.0 * n4 / 840.0 - 209.0 * n5 / 4480.0 + 5569.0 * n6 / 90720.0,
            4397.0 * n4 / 161280.0 - 11.0 * n5 / 504.0 - 830251.0 * n6 / 7257600.0,
            4583.0 * n5 / 161280.0 - 108847.0 * n6 / 3991680.0,
            20648693.0 * n6 / 638668800.0,
        ];
        let delta = [
            2.0 * n - 2.0 * n2 / 3.0 - 2.0 * n3 + 116.0 * n4 / 45.0 + 26.0 * n5 / 45.0
                - 2854.0 * n6 / 675.0,
            7.0 * n2 / 3.0 - 8.0 * n3 / 5.0 - 227.0 * n4 / 45.0
                + 2704.0 * n5 / 315.0
                + 2323.0 * n6 / 945.0,
            56.0 * n3 / 15.0 - 136.0 * n4 / 35.0 - 1262.0 * n5 / 105.0 + 73814.0 * n6 / 2835.0,
            4279.0 * n4 / 630.0 - 332.0 * n5 / 35.0 - 399572.0 * n6 / 14175.0,
            4174.0 * n5 / 315.0 - 144838.0 * n6 / 6237.0,
            601676.0 * n6 / 22275.0,
        ];
        let mut s = Self {
            e: e2.sqrt(),
            k0a: p.scale_factor * a_rect,
            alpha,
            beta,
            delta,
            y0: 0.0,
            lon0: p.lon_origin.to_radians(),
        };
        let chi0 = s.conformal_lat(p.lat_origin.to_radians());
        let xi0 = chi0
            + (1..=6)
                .map(|j| s.alpha[j - 1] * (2.0 * j as f64 * chi0).sin())
                .sum::<f64>();
        s.y0 = s.k0a * xi0;
        s
    }

    /// tan of the conformal latitude, closed form.
    fn conformal_tan(&self, phi: f64) -> f64 {
        let tau = phi.tan();
        let sigma = (self.e * (self.e * tau / (1.0 + tau * tau).sqrt()).atanh()).sinh();
        tau * (1.0 + sigma * sigma).sqrt() - sigma * (1.0 + tau * tau).sqrt()
    }

    fn conformal_lat(&self, phi: f64) -> f64 {
        self.conformal_tan(phi).atan()
    }

    /// Returns `(x, y)` relative to the central meridian and equator, scaled.
    fn project(&self, phi: f64, lam: f64) -> (f64, f64) {
        let dl = lam - self.lon0;
        let tau_p = self.conformal_tan(phi);
        let xi_p = tau_p.atan2(dl.cos());
        let eta_p = (dl.sin() / (tau_p * tau_p + dl.cos() * dl.cos()).sqrt()).asinh();
        let mut xi = xi_p;
        let mut eta = eta_p;
        for (j, a) in self.alpha.iter().enumerate() {
            let k = 2.0 * (j + 1) as f64;
            xi += a * (k * xi_p).sin() * (k * eta_p).cosh();
            eta += a * (k * xi_p).cos() * (k * eta_p).sinh();
        }
        (self.k0a * eta, self.k0a * xi)
    }

    fn unproject(&self, x: f64, y: f64) -> (f64, f64) {
        let xi = y / self.k0a;
        let eta = x / self.k0a;
        let mut xi_p = xi;
        let mut eta_p = eta;
        for (j, b) in self.beta.iter().enumerate() {
            let k = 2.0 * (j + 1) as f64;
            xi_p -= b * (k * xi).sin() * (k * eta).cosh();
            eta_p -= b * (k * xi).cos() * (k * eta).sinh();
        }
        let chi = (xi_p.sin() / eta_p.cosh()).asin();
        let lam = self.lon0 + eta_p.sinh().atan2(xi_p.cos());
        let phi = chi
            + self
                .delta
                .iter()
                .enumerate()
                .map(|(j, d)| d * (2.0 * (j + 1) as f64 * chi).sin())
                .sum::<f64>();
        (phi, lam)
    }
}

/// Inverse projection: planar ITM meters to geographic degrees.
pub fn itm_to_wgs84(coord: ItmCoord, proj: &TmProjection) -> Result<GeoCoord, GeodesyError> {
    if !coord.in_domain() {
        return Err(GeodesyError::ItmOutOfDomain {
            easting: coord.easting,
            northing: coord.northing,
        });
    }
    let s = proj.series();
    let x = coord.easting - proj.false_easting;
    let y = coord.northing - proj.false_northing + s.y0;
    let (phi, lam) = s.unproject(x, y);
    Ok(GeoCoord::new(phi.to_degrees(), lam.to_degrees()))
}

/// Forward projection: geographic degrees to planar ITM meters.
pub fn wgs84_to_itm(coord: GeoCoord, proj: &TmProjection) -> Result<ItmCoord, GeodesyError> {
    if !coord.in_domain() {
        return Err(GeodesyError::GeoOutOfDomain {
            latitude: coord.latitude,
            longitude: coord.longitude,
        });
    }
    let s = proj.series();
    let (x, y) = s.project(coord.latitude.to_radians(), coord.longitude.to_radians());
    Ok(ItmCoord::new(
        x + proj.false_easting,
        y - s.y0 + proj.false_northing,
    ))
}

/// Batch inverse projection sharing one coefficient set.
pub fn itm_to_wgs84_all(
    coords: &[ItmCoord],
    proj: &TmProjection,
) -> Result<Vec<GeoCoord>, GeodesyError> {
    let s = proj.series();
    coords
        .iter()
        .map(|c| {
            if !c.in_domain() {
                return Err(GeodesyError::ItmOutOfDomain {
                    easting: c.easting,
                    northing: c.northing,
                });
            }
            let (phi, lam) = s.unproject(
                c.easting - proj.false_easting,
                c.northing - proj.false_northing + s.y0,
            );
            Ok(GeoCoord::new(phi.to_degrees(), lam.to_degrees()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn false_origin_maps_to_projection_origin() {
        let p = TmProjection::itm();
        let g = itm_to_wgs84(ItmCoord::new(600_000.0, 750_000.0), &p).unwrap();
        assert!((g.latitude - 53.5).abs() < 1e-9, "{g:?}");
        assert!((g.longitude + 8.0).abs() < 1e-9, "{g:?}");
        let c = wgs84_to_itm(GeoCoord::new(53.5, -8.0), &p).unwrap();
        assert!((c.easting - 600_000.0).abs() < 1e-4);
        assert!((c.northing - 750_000.0).abs() < 1e-4);
    }

    #[test]
    fn central_meridian_maps_to_false_easting() {
        let p = TmProjection::itm();
        for lat in [51.2, 52.0, 53.0, 54.4, 55.3] {
            let c = wgs84_to_itm(GeoCoord::new(lat, -8.0), &p).unwrap();
            assert!((c.easting - 600_000.0).abs() < 1e-4, "{lat}: {c:?}");
        }
    }

    #[test]
    fn out_of_domain_inputs() {
        let p = TmProjection::itm();
        assert!(matches!(
            itm_to_wgs84(ItmCoord::new(-1.0, 750_000.0), &p),
            Err(GeodesyError::ItmOutOfDomain { .. })
        ));
        assert!(matches!(
            itm_to_wgs84(ItmCoord::new(600_000.0, f64::NAN), &p),
            Err(GeodesyError::ItmOutOfDomain { .. })
        ));
        assert!(matches!(
            wgs84_to_itm(GeoCoord::new(40.0, -8.0), &p),
            Err(GeodesyError::GeoOutOfDomain { .. })
        ));
        assert!(matches!(
            wgs84_to_itm(GeoCoord::new(53.0, 2.0), &p),
            Err(GeodesyError::GeoOutOfDomain { .. })
        ));
    }

    #[test]
    fn projection_validation() {
        let mut p = TmProjection::itm();
        assert!(p.validate().is_ok());
        p.scale_factor = 1.2;
        assert!(p.validate().is_err());
    }
}
