//! WGS84 geodetic → UTM, Krüger series to fourth order in `n`.

#[cfg(not(feature = "std"))]
use num_traits::Float;

const WGS84_A: f64 = 6_378_137.0;
const WGS84_INV_F: f64 = 298.257_223_563;
const K0: f64 = 0.9996;
const FALSE_EASTING: f64 = 500_000.0;
const FALSE_NORTHING_SOUTH: f64 = 10_000_000.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeodeticPoint {
    /// Degrees, `[-80, 84]`.
    pub latitude: f64,
    /// Degrees, `[-180, 180)`.
    pub longitude: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Hemisphere {
    North,
    South,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UtmCoordinate {
    pub zone: u8,
    pub hemisphere: Hemisphere,
    pub easting: f64,
    pub northing: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
pub enum GeodesyError {
    #[error("latitude {0} is outside the UTM band [-80, 84]")]
    LatitudeOutOfBand(f64),
    #[error("longitude {0} is outside [-180, 180)")]
    LongitudeOutOfRange(f64),
    #[error("zone {0} is not in 1..=60")]
    BadZone(u8),
    #[error("point falls in zone {got}, dataset is fixed to zone {expected}")]
    ZoneMismatch { expected: u8, got: u8 },
}

impl GeodeticPoint {
    pub fn new(latitude: f64, longitude: f64) -> Result<Self, GeodesyError> {
        if !(-80.0..=84.0).contains(&latitude) {
            return Err(GeodesyError::LatitudeOutOfBand(latitude));
        }
        if !(-180.0..180.0).contains(&longitude) {
            return Err(GeodesyError::LongitudeOutOfRange(longitude));
        }
        Ok(Self { latitude, longitude })
    }

    /// Standard UTM zone, including the Norway and Svalbard exceptions.
    pub fn zone(&self) -> u8 {
        let (lat, lon) = (self.latitude, self.longitude);
        if (56.0..64.0).contains(&lat) && (3.0..12.0).contains(&lon) {
            return 32;
        }
        if (72.0..=84.0).contains(&lat) && lon >= 0.0 && lon < 42.0 {
            return match lon {
                l if l < 9.0 => 31,
                l if l < 21.0 => 33,
                l if l < 33.0 => 35,
                _ => 37,
            };
        }
        (((lon + 180.0) / 6.0).floor() as i32 + 1).clamp(1, 60) as u8
    }
}

/// Central meridian of a zone in degrees.
pub fn central_meridian(zone: u8) -> f64 {
    zone as f64 * 6.0 - 183.0
}

struct Series {
    a_rect: f64,
    alpha: [f64; 4],
    e: f64,
}

fn series() -> Series {
    let f = 1.0 / WGS84_INV_F;
    let n = f / (2.0 - f);
    let (n2, n3, n4) = (n * n, n * n * n, n * n * n * n);
    Series {
        a_rect: WGS84_A / (1.0 + n) * (1.0 + n2 / 4.0 + n4 / 64.0),
        alpha: [
            n / 2.0 - 2.0 * n2 / 3.0 + 5.0 * n3 / 16.0 + 41.0 * n4 / 180.0,
            13.0 * n2 / 48.0 - 3.0 * n3 / 5.0 + 557.0 * n4 / 1440.0,
            61.0 * n3 / 240.0 - 103.0 * n4 / 140.0,
            49561.0 * n4 / 161280.0,
        ],
        e: (f * (2.0 - f)).sqrt(),
    }
}

/// Projects into the point's own zone.
pub fn to_utm(p: &GeodeticPoint) -> Result<UtmCoordinate, GeodesyError> {
    to_utm_in_zone(p, p.zone())
}

/// Projects into a given zone, e.g. the zone fixed by a dataset's first fix.
pub fn to_utm_in_zone(p: &GeodeticPoint, zone: u8) -> Result<UtmCoordinate, GeodesyError> {
    let p = GeodeticPoint::new(p.latitude, p.longitude)?;
    if !(1..=60).contains(&zone) {
        return Err(GeodesyError::BadZone(zone));
    }
    let s = series();
    let phi = p.latitude.to_radians();
    let lam = (p.longitude - central_meridian(zone)).to_radians();

    let sin_phi = phi.sin();
    let t = (sin_phi.atanh() - s.e * (s.e * sin_phi).atanh()).sinh();
    let xi_p = t.atan2(lam.cos());
    let eta_p = (lam.sin() / (1.0 + t * t).sqrt()).atanh();

    let (mut xi, mut eta) = (xi_p, eta_p);
    for (j, a) in s.alpha.iter().enumerate() {
        let m = 2.0 * (j + 1) as f64;
        xi += a * (m * xi_p).sin() * (m * eta_p).cosh();
        eta += a * (m * xi_p).cos() * (m * eta_p).sinh();
    }

    let easting = FALSE_EASTING + K0 * s.a_rect * eta;
    let mut northing = K0 * s.a_rect * xi;
    let hemisphere = if p.latitude >= 0.0 { Hemisphere::North } else { Hemisphere::South };
    if hemisphere == Hemisphere::South {
        northing += FALSE_NORTHING_SOUTH;
    }
    Ok(UtmCoordinate { zone, hemisphere, easting, northing })
}

/// Projects a sequence of fixes, pinning the zone to the first one.
#[derive(Debug, Clone, Default)]
pub struct ZoneLock {
    zone: Option<(u8, Hemisphere)>,
}

impl ZoneLock {
    pub fn project(&mut self, p: &GeodeticPoint) -> Result<UtmCoordinate, GeodesyError> {
        let own = p.zone();
        match self.zone {
            None => {
                let c = to_utm_in_zone(p, own)?;
                self.zone = Some((own, c.hemisphere));
                Ok(c)
            }
            Some((zone, hemi)) => {
                let c = to_utm_in_zone(p, zone)?;
                if own != zone || c.hemisphere != hemi {
                    return Err(GeodesyError::ZoneMismatch { expected: zone, got: own });
                }
                Ok(c)
            }
        }
    }
}
