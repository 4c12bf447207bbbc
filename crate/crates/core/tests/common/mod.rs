#![allow(dead_code, clippy::field_reassign_with_default, clippy::too_many_arguments)]

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use changeqa::config::{Config, MockEncoderRule, PaletteEntry};
use changeqa::pipeline::LoadedPair;
use changeqa::raster::{save_image_png, save_mask_png, PixelRect, RgbImage, SemanticMask};
use changeqa::regions::IouDirection;

/// Recursive flood fill; components in order of their first pixel in a
/// row-major scan, each as a sorted pixel list.
pub fn flood_fill(bits: &[bool], w: usize, h: usize, eight: bool) -> Vec<Vec<(u32, u32)>> {
    fn visit(
        bits: &[bool],
        seen: &mut [bool],
        w: usize,
        h: usize,
        eight: bool,
        x: i64,
        y: i64,
        out: &mut Vec<(u32, u32)>,
    ) {
        if x < 0 || y < 0 || x >= w as i64 || y >= h as i64 {
            return;
        }
        let i = y as usize * w + x as usize;
        if !bits[i] || seen[i] {
            return;
        }
        seen[i] = true;
        out.push((x as u32, y as u32));
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                if (dx, dy) == (0, 0) || (!eight && dx != 0 && dy != 0) {
                    continue;
                }
                visit(bits, seen, w, h, eight, x + dx, y + dy, out);
            }
        }
    }
    let mut seen = vec![false; w * h];
    let mut comps = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if bits[y * w + x] && !seen[y * w + x] {
                let mut c = Vec::new();
                visit(bits, &mut seen, w, h, eight, x as i64, y as i64, &mut c);
                c.sort_by_key(|&(x, y)| (y, x));
                comps.push(c);
            }
        }
    }
    comps
}

pub const BG: [u8; 3] = [90, 90, 90];
pub const BUILDING: [u8; 3] = [200, 40, 40];
pub const TREE: [u8; 3] = [30, 140, 30];
pub const CLASSES: [&str; 3] = ["background", "building", "tree"];

/// A change the pipeline must keep.
#[derive(Clone, Debug, PartialEq)]
pub struct Planted {
    pub pair_id: String,
    pub class: &'static str,
    pub bbox: PixelRect,
}

pub struct Suite {
    pub pairs: Vec<LoadedPair>,
    pub planted: Vec<Planted>,
}

fn paint(img: &mut RgbImage, r: PixelRect, rgb: [u8; 3]) {
    for y in r.y0..r.y0 + r.h {
        for x in r.x0..r.x0 + r.w {
            img.put_pixel(x, y, rgb);
        }
    }
}

fn label(m: &mut SemanticMask, r: PixelRect, class: u8) {
    for y in r.y0..r.y0 + r.h {
        for x in r.x0..r.x0 + r.w {
            m.set(x, y, class);
        }
    }
}

/// 64×64 pairs split into four 32×32 cells. Each cell is empty or holds one of:
/// a real appearance (planted), a mask-only change, an object present in both
/// images but labelled only after, an undersized change, or an unlabelled
/// image change. Pair 0 never holds a planted change.
pub fn planted_suite(n_pairs: usize, seed: u64) -> Suite {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::new();
    let mut planted = Vec::new();
    for p in 0..n_pairs {
        let pair_id = format!("pair{p:02}");
        let mut bi = RgbImage::filled(64, 64, BG);
        let mut ai = bi.clone();
        let bm = SemanticMask::filled(64, 64, 3, 0).unwrap();
        let mut am = bm.clone();
        for cell in 0..4u32 {
            let (cx, cy) = ((cell % 2) * 32, (cell / 2) * 32);
            let kind = match (p, cell) {
                (0, _) => rng.gen_range(2..6),
                (_, 0) => 0,
                _ => rng.gen_range(0..7),
            };
            let s = rng.gen_range(10..=16);
            let x0 = cx + rng.gen_range(3..=29 - s);
            let y0 = cy + rng.gen_range(3..=29 - s);
            let r = PixelRect::new(x0, y0, s, s);
            let (class, rgb, name) = if rng.gen_bool(0.5) {
                (1u8, BUILDING, "building")
            } else {
                (2u8, TREE, "tree")
            };
            match kind {
                0 | 1 => {
                    paint(&mut ai, r, rgb);
                    label(&mut am, r, class);
                    planted.push(Planted { pair_id: pair_id.clone(), class: name, bbox: r });
                }
                2 => label(&mut am, r, class),
                3 => {
                    paint(&mut bi, r, rgb);
                    paint(&mut ai, r, rgb);
                    label(&mut am, r, class);
                }
                4 => {
                    let t = PixelRect::new(x0, y0, 3, 3);
                    paint(&mut ai, t, rgb);
                    label(&mut am, t, class);
                }
                5 => paint(&mut ai, r, rgb),
                _ => {}
            }
        }
        pairs.push(LoadedPair::new(pair_id, bi, ai, bm, am).unwrap());
    }
    Suite { pairs, planted }
}

/// Pipeline configuration matching the suite: palette encoder, judge pinned to 5,
/// low temporal IoU treated as change.
pub fn suite_config() -> Config {
    let mut c = Config::default();
    c.classes = CLASSES.iter().map(|s| s.to_string()).collect();
    c.seed = 7;
    c.regions.min_size = 20;
    c.regions.iou_direction = IouDirection::RejectAbove;
    c.screen.crop_margin = 2;
    c.encoder.rule = MockEncoderRule::Palette;
    c.encoder.dim = 8;
    c.encoder.palette = vec![
        PaletteEntry { color: BG, class: "background".into() },
        PaletteEntry { color: BUILDING, class: "building".into() },
        PaletteEntry { color: TREE, class: "tree".into() },
    ];
    c
}

/// Writes PNGs and a relative-path manifest into `dir`; returns the manifest path.
pub fn write_suite(pairs: &[LoadedPair], dir: &Path) -> PathBuf {
    fs::create_dir_all(dir.join("pairs")).unwrap();
    let mut manifest = String::new();
    for p in pairs {
        let f = |s: &str| format!("pairs/{}_{s}.png", p.pair_id);
        save_image_png(&p.before_image, dir.join(f("before"))).unwrap();
        save_image_png(&p.after_image, dir.join(f("after"))).unwrap();
        save_mask_png(&p.before_mask, dir.join(f("before_mask"))).unwrap();
        save_mask_png(&p.after_mask, dir.join(f("after_mask"))).unwrap();
        manifest.push_str(
            &serde_json::json!({
                "pair_id": p.pair_id,
                "before_image": f("before"),
                "after_image": f("after"),
                "before_mask": f("before_mask"),
                "after_mask": f("after_mask"),
            })
            .to_string(),
        );
        manifest.push('\n');
    }
    let path = dir.join("pairs.jsonl");
    fs::write(&path, manifest).unwrap();
    path
}

/// Uniform-noise images with background-only masks.
pub fn noise_pairs(n: usize, size: u32, seed: u64) -> Vec<LoadedPair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let mut noise = || {
                let s: Vec<u8> = (0..size * size * 3).map(|_| rng.gen()).collect();
                RgbImage::new(size, size, s).unwrap()
            };
            let (b, a) = (noise(), noise());
            let m = SemanticMask::filled(size, size, 3, 0).unwrap();
            LoadedPair::new(format!("noise{i}"), b, a, m.clone(), m).unwrap()
        })
        .collect()
}

/// Serves `router` on an ephemeral port from its own runtime thread.
/// Dropping the guard stops the server.
pub struct TestServer {
    pub base: String,
    stop: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl TestServer {
    pub fn start(router: axum::Router) -> Self {
        let (addr_tx, addr_rx) = std::sync::mpsc::channel();
        let (stop_tx, stop_rx) = tokio::sync::oneshot::channel::<()>();
        let thread = std::thread::spawn(move || {
            let rt = tokio::runtime::Builder::new_multi_thread()
                .worker_threads(2)
                .enable_all()
                .build()
                .unwrap();
            rt.block_on(async move {
                let l = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
                addr_tx.send(l.local_addr().unwrap()).unwrap();
                axum::serve(l, router)
                    .with_graceful_shutdown(async {
                        let _ = stop_rx.await;
                    })
                    .await
                    .unwrap();
            });
        });
        let addr = addr_rx.recv().unwrap();
        Self {
            base: format!("http://{addr}"),
            stop: Some(stop_tx),
            thread: Some(thread),
        }
    }
}

impl Drop for TestServer {
    fn drop(&mut self) {
        if let Some(s) = self.stop.take() {
            let _ = s.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}
