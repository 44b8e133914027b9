//! Raster to PNG with a fixed viridis colormap and ×4 nearest-neighbour
//! upscaling, so renderings are diffable.

use ersinv::raster::Raster;

pub const SCALE: usize = 4;

/// RGB pixels of `r` scaled by `scale`, row-major. With `log` the colors
/// follow `log10` of the values (all must be positive). A constant raster
/// maps to the middle of the colormap.
pub fn rgb(r: &Raster, scale: usize, log: bool) -> Vec<u8> {
    let f = |v: f64| if log { v.log10() } else { v };
    let (lo, hi) = (f(r.min()), f(r.max()));
    let (h, w) = r.dims();
    let mut out = Vec::with_capacity(h * w * scale * scale * 3);
    for i in 0..h * scale {
        for j in 0..w * scale {
            let v = f(r.get(i / scale, j / scale));
            let t = if hi > lo { (v - lo) / (hi - lo) } else { 0.5 };
            let c = colorous::VIRIDIS.eval_continuous(t.clamp(0.0, 1.0));
            out.extend_from_slice(&[c.r, c.g, c.b]);
        }
    }
    out
}

pub fn png(r: &Raster, log: bool) -> Result<Vec<u8>, png::EncodingError> {
    let (h, w) = r.dims();
    let mut bytes = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut bytes, (w * SCALE) as u32, (h * SCALE) as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header()?;
        writer.write_image_data(&rgb(r, SCALE, log))?;
    }
    Ok(bytes)
}

/// `<stem>_min<lo>_max<hi>.png`, with four significant digits.
pub fn legend_name(stem: &str, r: &Raster) -> String {
    format!("{stem}_min{}_max{}.png", sig4(r.min()), sig4(r.max()))
}

fn sig4(v: f64) -> String {
    let s = format!("{v:.3e}");
    let x: f64 = s.parse().unwrap_or(v);
    format!("{x}")
}
