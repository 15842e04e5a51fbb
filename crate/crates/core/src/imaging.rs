//! PNG sanity checks shared by the sandbox and the gateway.

/// Fully decodes `bytes` as PNG and returns `(width, height)`. Truncated or
/// corrupt data is an error.
pub fn decode_png(bytes: &[u8]) -> Result<(u32, u32), String> {
    let decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    let mut reader = decoder.read_info().map_err(|e| e.to_string())?;
    let size = reader.output_buffer_size().ok_or("image too large to decode")?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(|e| e.to_string())?;
    Ok((info.width, info.height))
}

/// Encodes a solid-color RGB image. Handy for fixtures.
pub fn solid_png(width: u32, height: u32, rgb: [u8; 3]) -> Vec<u8> {
    let mut out = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut out, width, height);
        encoder.set_color(png::ColorType::Rgb);
        encoder.set_depth(png::BitDepth::Eight);
        let mut writer = encoder.write_header().expect("in-memory PNG header");
        let pixels: Vec<u8> = rgb.iter().copied().cycle().take((width * height * 3) as usize).collect();
        writer.write_image_data(&pixels).expect("in-memory PNG data");
    }
    out
}
