//! NMEA 0183 GGA sentences and great-circle distance.

use thiserror::Error;

use crate::geo::GeoPoint;

/// Mean Earth radius used by the threshold filter.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NmeaError {
    #[error("checksum mismatch: sentence says {stated:02X}, computed {computed:02X}")]
    ChecksumMismatch { stated: u8, computed: u8 },
    #[error("malformed sentence: {0}")]
    Malformed(String),
    #[error("no GPS fix (fix quality 0)")]
    FixQualityZero,
    /// A well-formed sentence of some other type. Adapters skip these.
    #[error("not a GGA sentence: {0}")]
    NotGga(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GgaFix {
    pub point: GeoPoint,
    pub fix_quality: u8,
    pub satellites: Option<u8>,
}

/// XOR of every byte between `$` and `*`.
pub fn checksum(body: &str) -> u8 {
    body.bytes().fold(0, |acc, b| acc ^ b)
}

fn malformed(msg: impl Into<String>) -> NmeaError {
    NmeaError::Malformed(msg.into())
}

/// Parses one GGA line. The checksum is verified before anything else.
pub fn parse_gga(line: &str) -> Result<GgaFix, NmeaError> {
    let line = line.trim();
    let rest = line.strip_prefix('$').ok_or_else(|| malformed("missing leading '$'"))?;
    let (body, stated) = rest.rsplit_once('*').ok_or_else(|| malformed("missing '*' checksum"))?;
    if stated.len() != 2 {
        return Err(malformed("checksum must be two hex digits"));
    }
    let stated = u8::from_str_radix(stated, 16).map_err(|_| malformed("checksum is not hex"))?;
    let computed = checksum(body);
    if stated != computed {
        return Err(NmeaError::ChecksumMismatch { stated, computed });
    }

    let fields: Vec<&str> = body.split(',').collect();
    let address = fields[0];
    if address.len() != 5 || !address.is_ascii() {
        return Err(malformed(format!("bad address field `{address}`")));
    }
    if &address[2..] != "GGA" {
        return Err(NmeaError::NotGga(address.to_string()));
    }
    if fields.len() < 10 {
        return Err(malformed(format!("GGA needs at least 10 fields, got {}", fields.len())));
    }

    let fix_quality: u8 = fields[6].parse().map_err(|_| malformed(format!("bad fix quality `{}`", fields[6])))?;
    if fix_quality == 0 {
        return Err(NmeaError::FixQualityZero);
    }
    let lat = parse_coord(fields[2], fields[3], 2, ('N', 'S'))?;
    let lon = parse_coord(fields[4], fields[5], 3, ('E', 'W'))?;
    let point = GeoPoint::new(lat, lon).map_err(|e| malformed(e.to_string()))?;
    let satellites = fields[7].parse().ok();
    Ok(GgaFix {
        point,
        fix_quality,
        satellites,
    })
}

/// `ddmm.mmmm` / `dddmm.mmmm` plus hemisphere letter into signed degrees.
fn parse_coord(value: &str, hemi: &str, deg_digits: usize, (pos, neg): (char, char)) -> Result<f64, NmeaError> {
    let dot = value.find('.').unwrap_or(value.len());
    if dot != deg_digits + 2 || !value.bytes().all(|b| b.is_ascii_digit() || b == b'.') {
        return Err(malformed(format!("bad coordinate `{value}`")));
    }
    let degrees: f64 = value[..deg_digits].parse().map_err(|_| malformed(format!("bad degrees in `{value}`")))?;
    let minutes: f64 = value[deg_digits..].parse().map_err(|_| malformed(format!("bad minutes in `{value}`")))?;
    if minutes >= 60.0 {
        return Err(malformed(format!("minutes out of range in `{value}`")));
    }
    let magnitude = degrees + minutes / 60.0;
    match hemi.chars().next() {
        Some(c) if c == pos && hemi.len() == 1 => Ok(magnitude),
        Some(c) if c == neg && hemi.len() == 1 => Ok(-magnitude),
        _ => Err(malformed(format!("bad hemisphere `{hemi}`"))),
    }
}

/// Formats a point as a GGA sentence with four decimal places of minutes.
pub fn format_gga(point: GeoPoint, utc: &str) -> String {
    let (lat, ns) = format_coord(point.lat, 2, ('N', 'S'));
    let (lon, ew) = format_coord(point.lon, 3, ('E', 'W'));
    let body = format!("GPGGA,{utc},{lat},{ns},{lon},{ew},1,08,0.9,0.0,M,0.0,M,,");
    format!("${body}*{:02X}", checksum(&body))
}

fn format_coord(value: f64, deg_digits: usize, (pos, neg): (char, char)) -> (String, char) {
    // integer ten-thousandths of a minute, so 59.99996' carries into the degree
    let units = (value.abs() * 60.0 * 10_000.0).round() as u64;
    let degrees = units / (60 * 10_000);
    let rem = units % (60 * 10_000);
    let text = format!(
        "{degrees:0width$}{:02}.{:04}",
        rem / 10_000,
        rem % 10_000,
        width = deg_digits
    );
    (text, if value < 0.0 { neg } else { pos })
}

/// Great-circle distance in metres on a sphere of radius [`EARTH_RADIUS_M`].
pub fn haversine_m(a: GeoPoint, b: GeoPoint) -> f64 {
    let (phi1, phi2) = (a.lat.to_radians(), b.lat.to_radians());
    let dphi = phi2 - phi1;
    let dlambda = (b.lon - a.lon).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}
