//! Synthetic corpora shared by the integration and acceptance tests.
#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use brainsem::ingest::{AdjectiveCategory, NounCategory};
use brainsem::space::l2_normalize;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

pub fn unit(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    l2_normalize(&gaussian(rng, n)).unwrap()
}

pub fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        scale * z
    })
}

/// Paths of a small on-disk corpus covering every input format.
pub struct Corpus {
    pub dir: PathBuf,
    pub words: PathBuf,
    pub visual: PathBuf,
    pub schema: PathBuf,
    pub brain: PathBuf,
    pub lexicon: PathBuf,
    pub phrases: PathBuf,
}

fn vectors_text(rows: &[(String, Vec<f64>)]) -> String {
    let dim = rows[0].1.len();
    let mut s = format!("{} {dim}\n", rows.len());
    for (t, v) in rows {
        s.push_str(t);
        for x in v {
            s.push_str(&format!(" {x:.10}"));
        }
        s.push('\n');
    }
    s
}

pub const DIM: usize = 8;

/// Writes the corpus into `dir`. Word vectors are random; concept ratings
/// depend on the first embedding coordinates; gold phrases are a noisy
/// nonlinear composition of their constituents.
pub fn write_corpus(dir: &Path, seed: u64) -> Corpus {
    fs::create_dir_all(dir).unwrap();
    let mut r = rng(seed);
    let concepts: Vec<String> = (0..40).map(|i| format!("concept{i:02}")).collect();
    let adjectives: Vec<String> = (0..8).map(|i| format!("adj{i}")).collect();
    let nouns: Vec<String> = (0..14).map(|i| format!("noun{i:02}")).collect();

    let mut words = Vec::new();
    for t in concepts.iter().chain(&adjectives).chain(&nouns) {
        words.push((t.clone(), gaussian(&mut r, DIM)));
    }
    let visual: Vec<(String, Vec<f64>)> = words
        .iter()
        .take(30)
        .map(|(t, v)| {
            (
                t.clone(),
                v.iter()
                    .take(6)
                    .map(|x| x * 2.0 + 0.1 * r.random_range(-1.0..1.0))
                    .collect(),
            )
        })
        .collect();

    let schema = [("vision", 3), ("somatic", 2), ("audition", 2), ("emotion", 3)];
    let mut schema_csv = String::from("property,attribute\n");
    let mut attributes = Vec::new();
    for (p, n) in schema {
        for k in 0..n {
            let a = format!("{p}_{k}");
            schema_csv.push_str(&format!("{p},{a}\n"));
            attributes.push(a);
        }
    }
    let mut brain_csv = format!("concept,concreteness,category,{}\n", attributes.join(","));
    for (i, c) in concepts.iter().enumerate() {
        let v = &words[i].1;
        let unit_v = l2_normalize(v).unwrap();
        let ratings: Vec<String> = (0..attributes.len())
            .map(|k| {
                let y = 3.0 + 2.0 * unit_v[k % DIM] + 0.3 * r.random_range(-1.0..1.0);
                format!("{:.4}", y.clamp(0.0, 6.0))
            })
            .collect();
        let concreteness = if i % 3 == 0 { "abstract" } else { "concrete" };
        brain_csv.push_str(&format!("{c},{concreteness},misc,{}\n", ratings.join(",")));
    }

    let mut lexicon = String::new();
    let a_mat = gaussian_matrix(&mut r, DIM, DIM, 0.5);
    let b_mat = gaussian_matrix(&mut r, DIM, DIM, 0.5);
    let lookup = |t: &str| words.iter().find(|(w, _)| w == t).unwrap().1.clone();
    let mut phrases = Vec::new();
    for (i, a) in adjectives.iter().enumerate() {
        for (j, n) in nouns.iter().enumerate() {
            let ac = AdjectiveCategory::ALL[i % 4];
            let nc = NounCategory::ALL[j % 7];
            lexicon.push_str(&format!("{a}\t{n}\t{ac}\t{nc}\n"));
            let x1 = nalgebra::DVector::from_vec(l2_normalize(&lookup(a)).unwrap());
            let x2 = nalgebra::DVector::from_vec(l2_normalize(&lookup(n)).unwrap());
            let g = (&a_mat * x1).map(f64::tanh) + (&b_mat * x2).map(f64::tanh);
            let g: Vec<f64> = g.iter().map(|x| x + 0.05 * r.random_range(-1.0..1.0)).collect();
            phrases.push((format!("{a}_{n}"), g));
        }
    }

    let corpus = Corpus {
        dir: dir.to_path_buf(),
        words: dir.join("words.txt"),
        visual: dir.join("visual.txt"),
        schema: dir.join("schema.csv"),
        brain: dir.join("brain.csv"),
        lexicon: dir.join("lexicon.tsv"),
        phrases: dir.join("phrases.txt"),
    };
    fs::write(&corpus.words, vectors_text(&words)).unwrap();
    fs::write(&corpus.visual, vectors_text(&visual)).unwrap();
    fs::write(&corpus.schema, schema_csv).unwrap();
    fs::write(&corpus.brain, brain_csv).unwrap();
    fs::write(&corpus.lexicon, lexicon).unwrap();
    fs::write(&corpus.phrases, vectors_text(&phrases)).unwrap();
    corpus
}

/// One CLI invocation: subcommand name and its flags (without `--out`).
pub struct Invocation {
    pub args: Vec<String>,
    pub out: &'static str,
}

fn p(path: &Path) -> String {
    path.display().to_string()
}

/// Every pipeline run on `corpus`, writing under `root`. Later steps read
/// artifacts of earlier ones.
pub fn pipelines(corpus: &Corpus, root: &Path) -> Vec<Invocation> {
    let map = p(&root.join("map-fit").join("brain_map.json"));
    let model = p(&root.join("compose-train").join("model.json"));
    let s = |x: &str| x.to_string();
    vec![
        Invocation {
            args: vec![
                s("rsa"),
                s("--embeddings"),
                p(&corpus.words),
                s("--brain"),
                p(&corpus.brain),
                s("--schema"),
                p(&corpus.schema),
                s("--subset"),
                s("concrete"),
                s("--method"),
                s("spearman"),
            ],
            out: "rsa",
        },
        Invocation {
            args: vec![
                s("fuse-ridge"),
                s("--linguistic"),
                p(&corpus.words),
                s("--perceptual"),
                p(&corpus.visual),
                s("--lambda"),
                s("0.5"),
                s("--reduce-to"),
                s("4"),
            ],
            out: "fuse-ridge",
        },
        Invocation {
            args: vec![
                s("map-fit"),
                s("--embeddings"),
                p(&corpus.words),
                s("--brain"),
                p(&corpus.brain),
                s("--schema"),
                p(&corpus.schema),
            ],
            out: "map-fit",
        },
        Invocation {
            args: vec![
                s("map-apply"),
                s("--map"),
                map.clone(),
                s("--embeddings"),
                p(&corpus.words),
                s("--clamp"),
            ],
            out: "map-apply",
        },
        Invocation {
            args: vec![
                s("compose-train"),
                s("--model"),
                s("matrix"),
                s("--words"),
                p(&corpus.words),
                s("--phrases"),
                p(&corpus.phrases),
                s("--lexicon"),
                p(&corpus.lexicon),
                s("--max-epochs"),
                s("300"),
            ],
            out: "compose-train",
        },
        Invocation {
            args: vec![
                s("compose-eval"),
                s("--model-file"),
                model.clone(),
                s("--words"),
                p(&corpus.words),
                s("--phrases"),
                p(&corpus.phrases),
                s("--lexicon"),
                p(&corpus.lexicon),
            ],
            out: "compose-eval",
        },
        Invocation {
            args: vec![
                s("analyze-propdiff"),
                s("--map"),
                map.clone(),
                s("--words"),
                p(&corpus.words),
                s("--lexicon"),
                p(&corpus.lexicon),
                s("--model-file"),
                model.clone(),
                s("--grouping"),
                s("cross"),
            ],
            out: "analyze-propdiff",
        },
        Invocation {
            args: vec![
                s("profile"),
                s("--map"),
                map,
                s("--embeddings"),
                p(&corpus.words),
                s("--tokens"),
                s("noun01,concept03"),
                s("--composed"),
                s("adj2_noun01"),
                s("--model-file"),
                model,
                s("--lexicon"),
                p(&corpus.lexicon),
            ],
            out: "profile",
        },
        Invocation {
            args: vec![
                s("neighbors"),
                s("--embeddings"),
                p(&corpus.phrases),
                s("--query"),
                s("adj0_noun00,adj3_noun05"),
                s("--k"),
                s("3"),
            ],
            out: "neighbors",
        },
    ]
}

/// Runs the binary; returns exit code and standard error.
pub fn run_cli(args: &[String], seed: u64, out: &Path, extra: &[&str]) -> (i32, String) {
    let output = std::process::Command::new(env!("CARGO_BIN_EXE_brainsem"))
        .args(args)
        .args(["--seed", &seed.to_string(), "--out", &out.display().to_string()])
        .args(extra)
        .output()
        .expect("binary runs");
    (
        output.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&output.stderr).into_owned(),
    )
}

/// Runs every pipeline under `root`, panicking on the first failure.
pub fn run_all(corpus: &Corpus, root: &Path, seed: u64) -> Vec<Invocation> {
    let invocations = pipelines(corpus, root);
    for inv in &invocations {
        let (code, stderr) = run_cli(&inv.args, seed, &root.join(inv.out), &[]);
        assert_eq!(code, 0, "{} failed: {stderr}", inv.args[0]);
    }
    invocations
}

/// Sorted `(file name, bytes)` of a directory, manifest excluded.
pub fn outputs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap())
        .filter(|e| e.file_name() != "manifest.json")
        .map(|e| {
            (
                e.file_name().to_string_lossy().into_owned(),
                fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}
