//! Saves a trained head to a single-file artifact, prints its header and
//! reloads it.

use codemix::encoder::Embedding;
use codemix::heads::{self, make_folds, predict, train_svm, HeadInput, SvmConfig};
use codemix::Label;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let xs: Vec<Embedding> = (0..40)
        .map(|i| {
            let side = if i % 2 == 0 { 1.0 } else { -1.0 };
            Embedding::new(vec![side * (1.0 + (i % 5) as f32 / 10.0), (i % 3) as f32]).unwrap()
        })
        .collect();
    let ys: Vec<Label> = (0..40).map(|i| if i % 2 == 0 { Label::Offensive } else { Label::NotOffensive }).collect();
    let head = train_svm(&xs, &ys, &SvmConfig::default(), &make_folds(40, 10, 0)?)?;

    let dir = tempfile::tempdir()?;
    let path = dir.path().join("model.bin");
    heads::save(&head, &path)?;
    let bytes = std::fs::read(&path)?;
    let (header, payload) = heads::read_header(&bytes)?;
    println!("{} head, input dim {}, {} payload bytes", header.kind, header.input_dim, payload.len());

    let back = heads::load(&path)?;
    let probe = Embedding::new(vec![0.3, 1.0])?;
    let (a, b) = (predict(&head, HeadInput::Embedding(&probe))?, predict(&back, HeadInput::Embedding(&probe))?);
    println!("before {:?}\nafter  {:?}", a, b);
    assert_eq!(a, b);
    Ok(())
}
