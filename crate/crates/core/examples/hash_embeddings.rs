//! Deterministic hash embeddings and their cosine similarities.

use chronokey::embed::hash_encode;

fn cos(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn main() -> chronokey::Result<()> {
    let texts = ["鲁隐公元年正月", "鲁隐公元年二月", "鲁桓公三年九月", "郑伯克段于鄢"];
    let vecs: Vec<Vec<f32>> = texts.iter().map(|t| hash_encode(t, 64, 0, true)).collect::<Result<_, _>>()?;
    for (t, v) in texts.iter().zip(&vecs) {
        let sims: Vec<String> = vecs.iter().map(|w| format!("{:+.3}", cos(v, w))).collect();
        println!("{t:<10} {}", sims.join(" "));
    }
    assert_eq!(hash_encode(texts[0], 64, 0, true)?, vecs[0]);
    Ok(())
}
