//! Predict binary tags for a new sample (annotation) and rank training
//! samples against a tag query (retrieval).

use gasso::fitter::{fit, FitConfig};
use gasso::numkit::Vector;
use gasso::predictor::{annotate, build_score_index, retrieve, top_k_indices};
use gasso::simgen::{generate, sample_data, generate_truth, SettingSpec};

fn main() -> gasso::Result<()> {
    // Gaussian features paired with Bernoulli tags
    let spec = SettingSpec::setting2(3);
    let (_truth, d1, d2) = generate(&spec)?;
    let fitted = fit(&d1, &d2, spec.ranks, &FitConfig::one_step())?;

    // annotation: a held-out sample's features predict its tag probabilities
    let truth = generate_truth(&spec)?;
    let (h1, h2) = sample_data(&truth, &spec, 99)?;
    let new_features: Vector = h1.x.row(0).transpose();
    let ann = annotate(&fitted.params, &new_features, &d1.families)?;
    println!("top predicted tags for the held-out sample:");
    for &j in top_k_indices(&ann.probabilities, 5)?.iter() {
        println!(
            "  tag {j}: p = {:.3} (actual {})",
            ann.probabilities[j],
            h2.x[(0, j)]
        );
    }

    // retrieval: rank training samples by score-space Mahalanobis distance
    // to the held-out sample's own tag vector
    let index = build_score_index(&fitted.params, None, None)?;
    let query: Vector = h2.x.row(0).transpose();
    let ret = retrieve(&fitted.params, &index, &query)?;
    println!("\nclosest training samples to the tag query:");
    for &s in ret.ranking.iter().take(5) {
        println!("  sample {s}: distance {:.3}", ret.distances[s]);
    }
    Ok(())
}
