use core::ops::{Add, AddAssign, Mul, Neg, Sub};

/// A 2-D point in pixel coordinates. Pixel `(col, row)` has its center at `(col, row)`;
/// `y` grows downwards.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const ORIGIN: Point2 = Point2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Point2 { x, y }
    }

    pub fn from_polar(radius: f64, angle: f64) -> Self {
        Point2::new(radius * libm::cos(angle), radius * libm::sin(angle))
    }

    pub fn norm(self) -> f64 {
        libm::hypot(self.x, self.y)
    }

    pub fn norm_squared(self) -> f64 {
        self.x * self.x + self.y * self.y
    }

    pub fn distance(self, other: Point2) -> f64 {
        (self - other).norm()
    }

    /// Polar angle in `(-pi, pi]`.
    pub fn angle(self) -> f64 {
        libm::atan2(self.y, self.x)
    }

    pub fn dot(self, other: Point2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    /// Rotates by `angle` radians with the matrix `[[cos, -sin], [sin, cos]]`.
    pub fn rotate(self, angle: f64) -> Point2 {
        let (s, c) = (libm::sin(angle), libm::cos(angle));
        Point2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    /// Nearest pixel `(col, row)`, or `None` when that pixel lies outside `width x height`.
    pub fn nearest_pixel(self, width: usize, height: usize) -> Option<(usize, usize)> {
        let cx = libm::round(self.x);
        let cy = libm::round(self.y);
        if cx < 0.0 || cy < 0.0 || cx >= width as f64 || cy >= height as f64 {
            return None;
        }
        Some((cx as usize, cy as usize))
    }
}

impl Add for Point2 {
    type Output = Point2;
    fn add(self, rhs: Point2) -> Point2 {
        Point2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl AddAssign for Point2 {
    fn add_assign(&mut self, rhs: Point2) {
        self.x += rhs.x;
        self.y += rhs.y;
    }
}

impl Sub for Point2 {
    type Output = Point2;
    fn sub(self, rhs: Point2) -> Point2 {
        Point2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Point2 {
    type Output = Point2;
    fn mul(self, rhs: f64) -> Point2 {
        Point2::new(self.x * rhs, self.y * rhs)
    }
}

impl Neg for Point2 {
    type Output = Point2;
    fn neg(self) -> Point2 {
        Point2::new(-self.x, -self.y)
    }
}

/// Arithmetic mean, `None` for an empty slice.
pub fn centroid(points: &[Point2]) -> Option<Point2> {
    if points.is_empty() {
        return None;
    }
    let sum = points.iter().fold(Point2::ORIGIN, |acc, &p| acc + p);
    Some(sum * (1.0 / points.len() as f64))
}

/// Mean over the points whose flag is set.
pub fn centroid_where(points: &[Point2], keep: &[bool]) -> Option<Point2> {
    let mut sum = Point2::ORIGIN;
    let mut n = 0usize;
    for (p, _) in points.iter().zip(keep).filter(|(_, &k)| k) {
        sum += *p;
        n += 1;
    }
    (n > 0).then(|| sum * (1.0 / n as f64))
}

/// Wraps an angle into `(-pi/2, pi/2]`; orientations are defined modulo pi.
pub fn wrap_half_pi(angle: f64) -> f64 {
    let pi = core::f64::consts::PI;
    let wrapped = angle - pi * libm::ceil(angle / pi - 0.5);
    if wrapped <= -pi / 2.0 {
        wrapped + pi
    } else if wrapped > pi / 2.0 {
        wrapped - pi
    } else {
        wrapped
    }
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_pi(angle: f64) -> f64 {
    let tau = core::f64::consts::TAU;
    let pi = core::f64::consts::PI;
    let wrapped = angle - tau * libm::ceil(angle / tau - 0.5);
    if wrapped <= -pi {
        wrapped + tau
    } else if wrapped > pi {
        wrapped - tau
    } else {
        wrapped
    }
}
