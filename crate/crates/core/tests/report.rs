use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use repref_core::dataio::read_wav;
use repref_core::orchestrator::{run_experiment, RunOptions, RunOutcome};
use repref_core::plan::parse_plan;
use repref_core::report::{
    confusion_report, log_mel, results_table, write_table, ConfusionInputs, Preset, ReportError, ReportSource,
    SPECTROGRAM_MELS,
};

const PLAN: &str = r#"
[experiment]
name = "report"
output_dir = "unused"
seeds = [0, 1]

[optimizer]
max_epochs = 30
patience = 10

[[datasets]]
id = "tones"
tasks = [{ id = "pitch_class", kind = "multiclass" }]
[datasets.synthetic]
kind = "tonebank"
[datasets.synthetic.params]
n_per_class = 3
octaves = [4]
timbres = ["sine"]
duration_s = 0.5

[[features]]
id = "chroma"
builtin = "chroma_stats"

[[deformations]]
id = "noisy"
white_noise_snr_db = 5.0

[[probes]]
id = "slp"
architecture = "slp"

[[probes]]
id = "mlp"
architecture = "mlp"
hidden = [16]
"#;

fn run_in(dir: &Path) -> RunOutcome {
    let mut plan = parse_plan(PLAN).unwrap();
    plan.experiment.output_dir = dir.join("out");
    let outcome = run_experiment(&plan, &RunOptions::default(), &|_| {}).unwrap();
    assert!(outcome.complete(), "{:?}", outcome.exec.failures);
    outcome
}

fn example_ids(html: &str) -> Vec<String> {
    html.split("<li>").skip(1).map(|s| s.split([' ', '<']).next().unwrap().to_string()).collect()
}

fn hrefs(html: &str) -> Vec<String> {
    html.split("href=\"").skip(1).map(|s| s.split('"').next().unwrap().to_string()).collect()
}

#[test]
fn confusion_page_links_resolve_and_render_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let outcome = run_in(dir.path());
    let source = ReportSource::open(outcome.results_path.as_ref().unwrap()).unwrap();
    let datasets = source.datasets();
    let report_dir = source.report_dir();
    let inputs = ConfusionInputs {
        results: &source.results,
        datasets: &datasets,
        output_dir: &source.output_dir,
        report_dir: &report_dir,
    };

    let page = confusion_report(&inputs, "pitch_class", "chroma").unwrap();
    assert!(page.warnings.is_empty(), "{:?}", page.warnings);
    assert!(page.spectrograms > 0);
    let first = fs::read(&page.path).unwrap();
    let again = confusion_report(&inputs, "pitch_class", "chroma").unwrap();
    assert_eq!(fs::read(&again.path).unwrap(), first);

    let html = String::from_utf8(first).unwrap();
    let known: BTreeSet<&str> = datasets["tones"].tracks.iter().map(|t| t.track_id.as_str()).collect();
    let ids = example_ids(&html);
    assert!(!ids.is_empty());
    for id in &ids {
        assert!(known.contains(id.as_str()), "{id} is not a dataset track");
    }

    let page_dir = page.path.parent().unwrap();
    let links = hrefs(&html);
    assert_eq!(links.len(), 2 * ids.len());
    for link in &links {
        let target = page_dir.join(link);
        assert!(target.is_file(), "dangling link {link}");
        if link.ends_with(".png") {
            let audio_link =
                links.iter().find(|l| l.ends_with(".wav") && Path::new(l).file_stem() == Path::new(link).file_stem());
            let decoder = png::Decoder::new(std::io::BufReader::new(fs::File::open(&target).unwrap()));
            let reader = decoder.read_info().unwrap();
            let info = reader.info();
            assert_eq!(info.color_type, png::ColorType::Grayscale);
            assert_eq!(info.bit_depth, png::BitDepth::Eight);
            assert_eq!(info.height as usize, SPECTROGRAM_MELS);
            let signal = read_wav(&page_dir.join(audio_link.unwrap())).unwrap();
            assert_eq!(info.width as usize, log_mel(&signal).unwrap().ncols());
        }
    }
}

#[test]
fn tables_cover_every_preset() {
    let dir = tempfile::tempdir().unwrap();
    let outcome = run_in(dir.path());
    let source = ReportSource::open(outcome.results_path.as_ref().unwrap()).unwrap();
    for preset in Preset::ALL {
        let table = results_table(&source.results, preset).unwrap();
        assert_eq!(table.rows.len(), 1);
        let (csv, md) = write_table(&table, &source.report_dir()).unwrap();
        let csv = fs::read_to_string(csv).unwrap();
        assert_eq!(csv.lines().count(), 2);
        let md = fs::read_to_string(md).unwrap();
        assert_eq!(md.lines().count(), 3);
        // Two seeds: every value cell carries a spread.
        let cells = &table.rows[0].1;
        assert!(cells.iter().all(|c| c.contains('±')), "{cells:?}");
    }
    let robust = results_table(&source.results, Preset::Robustness).unwrap();
    assert_eq!(robust.columns, vec!["noisy".to_string()]);
}

#[test]
fn missing_confusion_target_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let outcome = run_in(dir.path());
    let source = ReportSource::open(outcome.results_path.as_ref().unwrap()).unwrap();
    let datasets = source.datasets();
    let report_dir = source.report_dir();
    let inputs = ConfusionInputs {
        results: &source.results,
        datasets: &datasets,
        output_dir: &source.output_dir,
        report_dir: &report_dir,
    };
    let err = confusion_report(&inputs, "pitch_class", "nope").unwrap_err();
    assert!(matches!(err, ReportError::NoSuchRun { .. }), "{err}");
}
