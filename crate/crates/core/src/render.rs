//! Sphere-disk rasterizer used for image-based policy observations.
//!
//! Every collision sphere is drawn as a depth-shaded disk of its color into a
//! z-buffer; the table is a flat quad. Cameras follow the pinhole model with
//! x right, y down and z along the optical axis.

use nalgebra::{Matrix3, Rotation3, UnitQuaternion};
use serde::{Deserialize, Serialize};
use std::io::{self, Read, Write};
use thiserror::Error;

use crate::body::BodyId;
use crate::math::{Pose, Vec3};
use crate::world::WorldState;

pub const BACKGROUND: [u8; 3] = [24, 24, 32];
const NEAR: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("camera is mounted on unknown link {0}")]
    UnknownLink(BodyId),
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("cannot downsample {from:?} to {to:?}")]
    InvalidSize { from: (u32, u32), to: (u32, u32) },
    #[error("ppm: {0}")]
    Ppm(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Intrinsics {
    /// Square image with the principal point at the center.
    pub fn centered(size: u32, focal: f64) -> Self {
        Self {
            fx: focal,
            fy: focal,
            cx: size as f64 / 2.0,
            cy: size as f64 / 2.0,
            width: size,
            height: size,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CameraMount {
    World(Pose),
    Link { link: BodyId, extrinsic: Pose },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub intrinsics: Intrinsics,
    pub mount: CameraMount,
}

impl Camera {
    pub fn validate(&self) -> Result<(), RenderError> {
        let k = &self.intrinsics;
        if !(k.fx > 0.0 && k.fy > 0.0) {
            return Err(RenderError::InvalidCamera("focal lengths must be positive".into()));
        }
        if k.width == 0 || k.height == 0 {
            return Err(RenderError::InvalidCamera("image size must be positive".into()));
        }
        Ok(())
    }
}

/// Camera orientation whose optical axis points along `forward`, with image
/// "down" as close to world -z as possible.
pub fn look_rotation(forward: Vec3) -> UnitQuaternion<f64> {
    let f = forward.normalize();
    let up = if f.cross(&Vec3::z()).norm() < 1e-9 {
        Vec3::y()
    } else {
        Vec3::z()
    };
    let right = f.cross(&up).normalize();
    let down = f.cross(&right);
    let m = Matrix3::from_columns(&[right, down, f]);
    UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(m))
}

pub fn look_at(eye: Vec3, target: Vec3) -> Pose {
    Pose::new(eye, look_rotation(target - eye))
}

pub fn resolve_camera_pose(camera: &Camera, world: &WorldState) -> Result<Pose, RenderError> {
    match &camera.mount {
        CameraMount::World(pose) => Ok(*pose),
        CameraMount::Link { link, extrinsic } => {
            if !world.is_robot_link(*link) {
                return Err(RenderError::UnknownLink(*link));
            }
            let body = world.body(*link).ok_or(RenderError::UnknownLink(*link))?;
            Ok(body.pose.compose(extrinsic))
        }
    }
}

/// Row-major 8-bit RGB image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image {
    pub width: u32,
    pub height: u32,
    pub data: Vec<u8>,
}

impl Image {
    pub fn filled(width: u32, height: u32, color: [u8; 3]) -> Self {
        let mut data = Vec::with_capacity((width * height * 3) as usize);
        for _ in 0..width * height {
            data.extend_from_slice(&color);
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = ((y * self.width + x) * 3) as usize;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    fn set(&mut self, x: u32, y: u32, c: [u8; 3]) {
        let i = ((y * self.width + x) * 3) as usize;
        self.data[i..i + 3].copy_from_slice(&c);
    }

    pub fn write_ppm<W: Write>(&self, mut w: W) -> io::Result<()> {
        write!(w, "P6\n{} {}\n255\n", self.width, self.height)?;
        w.write_all(&self.data)
    }

    pub fn read_ppm<R: Read>(mut r: R) -> Result<Self, RenderError> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let mut fields = Vec::new();
        let mut pos = 0;
        while fields.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(RenderError::Ppm("truncated header".into()));
            }
            fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
        }
        if fields[0] != "P6" || fields[3] != "255" {
            return Err(RenderError::Ppm("only binary 8-bit P6 is supported".into()));
        }
        let parse = |s: &str| s.parse::<u32>().map_err(|_| RenderError::Ppm(format!("bad size {s}")));
        let (width, height) = (parse(&fields[1])?, parse(&fields[2])?);
        let data = bytes.get(pos + 1..).unwrap_or_default().to_vec();
        if data.len() != (width * height * 3) as usize {
            return Err(RenderError::Ppm("pixel data length mismatch".into()));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }
}

/// Renders `world` from `camera`. Pure: identical inputs give identical bytes.
pub fn render(world: &WorldState, camera: &Camera) -> Result<Image, RenderError> {
    camera.validate()?;
    let pose = resolve_camera_pose(camera, world)?;
    let k = camera.intrinsics;
    let (w, h) = (k.width, k.height);
    let mut img = Image::filled(w, h, BACKGROUND);
    let mut depth = vec![f64::INFINITY; (w * h) as usize];

    if let Some(table) = &world.table {
        let origin = pose.position;
        for py in 0..h {
            for px in 0..w {
                let ray_cam = Vec3::new(
                    (px as f64 + 0.5 - k.cx) / k.fx,
                    (py as f64 + 0.5 - k.cy) / k.fy,
                    1.0,
                );
                let ray = pose.orientation * ray_cam;
                if ray.z.abs() < 1e-12 {
                    continue;
                }
                let t = (table.height - origin.z) / ray.z;
                if t <= NEAR {
                    continue;
                }
                let hit = origin + ray * t;
                if hit.x.abs() <= table.half_extent[0] && hit.y.abs() <= table.half_extent[1] {
                    depth[(py * w + px) as usize] = t;
                    img.set(px, py, table.color);
                }
            }
        }
    }

    for body in &world.bodies {
        for sphere in &body.spheres {
            let c = pose.inverse_transform_point(&body.pose.transform_point(&sphere.offset));
            if c.z <= NEAR {
                continue;
            }
            let u0 = k.fx * c.x / c.z + k.cx;
            let v0 = k.fy * c.y / c.z + k.cy;
            let rx = k.fx * sphere.radius / c.z;
            let ry = k.fy * sphere.radius / c.z;
            let x_lo = (u0 - rx).floor().max(0.0) as i64;
            let x_hi = (u0 + rx).ceil().min(w as f64 - 1.0) as i64;
            let y_lo = (v0 - ry).floor().max(0.0) as i64;
            let y_hi = (v0 + ry).ceil().min(h as f64 - 1.0) as i64;
            for py in y_lo..=y_hi {
                for px in x_lo..=x_hi {
                    let dx = (px as f64 + 0.5 - u0) / rx;
                    let dy = (py as f64 + 0.5 - v0) / ry;
                    let d2 = dx * dx + dy * dy;
                    if d2 > 1.0 {
                        continue;
                    }
                    let facing = (1.0 - d2).sqrt();
                    let z = c.z - sphere.radius * facing;
                    let idx = (py as u32 * w + px as u32) as usize;
                    if z < depth[idx] {
                        depth[idx] = z;
                        let shade = 0.55 + 0.45 * facing;
                        let col = sphere.color.map(|ch| (ch as f64 * shade).round() as u8);
                        img.set(px as u32, py as u32, col);
                    }
                }
            }
        }
    }
    Ok(img)
}

/// Box-filter downsampling with round-half-up integer averaging.
pub fn downsample(image: &Image, w2: u32, h2: u32) -> Result<Image, RenderError> {
    if w2 == 0 || h2 == 0 || w2 > image.width || h2 > image.height {
        return Err(RenderError::InvalidSize {
            from: (image.width, image.height),
            to: (w2, h2),
        });
    }
    let mut out = Image::filled(w2, h2, [0, 0, 0]);
    for oy in 0..h2 {
        let y0 = (oy as u64 * image.height as u64 / h2 as u64) as u32;
        let y1 = ((oy as u64 + 1) * image.height as u64 / h2 as u64) as u32;
        for ox in 0..w2 {
            let x0 = (ox as u64 * image.width as u64 / w2 as u64) as u32;
            let x1 = ((ox as u64 + 1) * image.width as u64 / w2 as u64) as u32;
            let mut sum = [0u32; 3];
            for y in y0..y1 {
                for x in x0..x1 {
                    let p = image.pixel(x, y);
                    for c in 0..3 {
                        sum[c] += p[c] as u32;
                    }
                }
            }
            let n = (x1 - x0) * (y1 - y0);
            out.set(ox, oy, sum.map(|s| ((s + n / 2) / n) as u8));
        }
    }
    Ok(out)
}
