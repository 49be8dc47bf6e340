use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{anyhow, Context, Result};
use retarget_core::analyzer::{analyze as analyze_graph, AnalyzeOptions, CompatibilityReport, Scenario};
use retarget_core::harness::{diff_graphs, diff_split, random_inputs, DiffReport};
use retarget_core::interpreter::{bench, run_graph, BenchReport, TensorMap};
use retarget_core::ir::{infer_shapes, is_custom, serialize_model, Graph, TensorSpec};
use retarget_core::profiles::{serialize_profile, CapabilityProfile};
use retarget_core::rewriter::{
    convert as convert_graph, AppliedRule, ConvTransposeMode, ConversionResult, ConvertOptions, ConvertedModel,
    CustomOpManifest, FusionEntry, RuleRegistry,
};
use serde::Serialize;

use crate::io::{self, all_profiles, load_model, resolve_profile, to_pretty};
use crate::table::Table;
use crate::{
    AnalyzeArgs, ClassifyArgs, ConvertArgs, DiffArgs, Failed, Mode, ProfilesAction, ProfilesArgs, RunArgs, Usage,
};

fn analyze_options(c: &ClassifyArgs) -> Result<AnalyzeOptions> {
    if !(0.0..=1.0).contains(&c.tail_fraction) {
        return Err(anyhow!(Usage(format!(
            "--tail-fraction must be in [0, 1], got {}",
            c.tail_fraction
        ))));
    }
    let mut opts = AnalyzeOptions {
        tail_fraction: c.tail_fraction,
        ..AnalyzeOptions::default()
    };
    for p in &c.prefer {
        let parse = |s: &str| {
            s.parse::<Scenario>()
                .map_err(|e| anyhow!(Usage(format!("--prefer {p}: {e}"))))
        };
        match p.split_once('=') {
            Some((node, s)) => {
                opts.prefer.insert(node.to_string(), parse(s)?);
            }
            None => opts.prefer_all = Some(parse(p)?),
        }
    }
    Ok(opts)
}

fn check_prefer_nodes(g: &Graph, opts: &AnalyzeOptions) -> Result<()> {
    for node in opts.prefer.keys() {
        if g.node(node).is_none() {
            return Err(anyhow!(Usage(format!("--prefer names unknown node '{node}'"))));
        }
    }
    Ok(())
}

fn print_report(g: &Graph, r: &CompatibilityReport) {
    println!("model:   {} ({} nodes)", g.name(), g.nodes().len());
    println!("profile: {}", r.profile_name);
    if r.deployable_as_is {
        println!("status:  deployable as-is");
        return;
    }
    println!(
        "status:  not deployable as-is ({} unsupported node(s), {} structural violation(s))",
        r.unsupported.len(),
        r.structural_violations.len()
    );
    if !r.unsupported.is_empty() {
        let mut t = Table::new(["NODE", "OP", "SCENARIO", "RULE", "RATIONALE"]);
        for a in &r.unsupported {
            t.row([
                a.node_id.clone(),
                a.op_type.clone(),
                a.scenario.to_string(),
                a.rule_id.clone().unwrap_or_else(|| "-".into()),
                a.rationale.clone(),
            ]);
        }
        print!("\n{}", t.render());
    }
    for v in &r.structural_violations {
        println!("violation: {v}");
    }
}

pub fn analyze(a: AnalyzeArgs) -> Result<u8> {
    let g = load_model(&a.model)?;
    let p = resolve_profile(&a.profile)?;
    let opts = analyze_options(&a.classify)?;
    check_prefer_nodes(&g, &opts)?;
    let r = analyze_graph(&g, &p, &RuleRegistry::shipped(), &opts)?;
    if let Some(out) = &a.out {
        io::write(out, &to_pretty(&r))?;
    }
    if a.json {
        print!("{}", to_pretty(&r));
    } else {
        print_report(&g, &r);
    }
    Ok(if r.deployable_as_is { 0 } else { 1 })
}

#[derive(Serialize)]
struct Verification {
    /// `numeric`, `shapes` (retraining changes the values) or `skipped`.
    kind: &'static str,
    pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    diff: Option<DiffReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    note: Option<String>,
}

#[derive(Serialize)]
struct ConvertManifest<'a> {
    applied: &'a [AppliedRule],
    #[serde(skip_serializing_if = "Option::is_none")]
    cut_tensors: Option<&'a [TensorSpec]>,
    custom_ops: &'a [CustomOpManifest],
    deploy_model: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    fused_output_name: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    fusion_manifest: Option<&'a [FusionEntry]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    postprocess_model: Option<String>,
    profile: &'a str,
    report: &'a CompatibilityReport,
    residual: &'a CompatibilityReport,
    retraining_required: bool,
    source_model: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    verification: Option<Verification>,
}

fn output_specs(g: &Graph) -> Result<Vec<TensorSpec>> {
    let shapes = infer_shapes(g)?;
    Ok(g.outputs().iter().map(|o| shapes[o].clone()).collect())
}

fn verify(original: &Graph, c: &ConversionResult, a: &ConvertArgs) -> Result<Verification> {
    if original.nodes().iter().any(|n| is_custom(&n.op_type)) {
        return Ok(Verification {
            kind: "skipped",
            pass: true,
            diff: None,
            note: Some("custom ops have no reference kernel".into()),
        });
    }
    let v = &a.verify_args;
    if c.retraining_required() {
        let want = output_specs(original)?;
        let got = match &c.model {
            ConvertedModel::Graph(g) => output_specs(g)?,
            ConvertedModel::Split(s) => output_specs(&s.postprocess)?,
        };
        let pass = want == got;
        return Ok(Verification {
            kind: "shapes",
            pass,
            diff: None,
            note: Some(if pass {
                "output shapes match; values change until the model is retrained".into()
            } else {
                format!("output specs differ: {want:?} vs {got:?}")
            }),
        });
    }
    let diff = match &c.model {
        ConvertedModel::Graph(g) => diff_graphs(original, g, v.trials, v.tol, v.seed)?,
        ConvertedModel::Split(s) => diff_split(original, s, v.trials, v.tol, v.seed)?,
    };
    Ok(Verification {
        kind: "numeric",
        pass: diff.pass,
        diff: Some(diff),
        note: None,
    })
}

pub fn convert(a: ConvertArgs) -> Result<u8> {
    let g = load_model(&a.model)?;
    let p = resolve_profile(&a.profile)?;
    let analyze = analyze_options(&a.classify)?;
    check_prefer_nodes(&g, &analyze)?;
    let opts = ConvertOptions {
        analyze,
        convtranspose_mode: a.mode.map(|m| match m {
            Mode::Exact => ConvTransposeMode::ExactNonoverlap,
            Mode::Structural => ConvTransposeMode::Structural,
        }),
        source_framework: a.source_framework.clone(),
    };
    let c = convert_graph(&g, &p, &RuleRegistry::shipped(), &opts)?;
    let verification = if a.verify { Some(verify(&g, &c, &a)?) } else { None };

    fs::create_dir_all(&a.out_dir).with_context(|| format!("cannot create {}", a.out_dir.display()))?;
    let stem = io::model_stem(&a.model);
    let deploy_name = format!("{stem}.deploy.nng.json");
    io::write(&a.out_dir.join(&deploy_name), &serialize_model(c.model.deployable()))?;
    let (post_name, split) = match &c.model {
        ConvertedModel::Split(s) => {
            let name = format!("{stem}.post.nng.json");
            io::write(&a.out_dir.join(&name), &serialize_model(&s.postprocess))?;
            (Some(name), Some(s))
        }
        ConvertedModel::Graph(_) => (None, None),
    };
    let verify_pass = verification.as_ref().is_none_or(|v| v.pass);
    let manifest = ConvertManifest {
        applied: &c.applied,
        cut_tensors: split.map(|s| s.cut_tensors.as_slice()),
        custom_ops: &c.custom_ops,
        deploy_model: deploy_name,
        fused_output_name: split.and_then(|s| s.fused_output_name.as_deref()),
        fusion_manifest: split
            .filter(|s| s.fused_output_name.is_some())
            .map(|s| s.fusion_manifest.as_slice()),
        postprocess_model: post_name,
        profile: &p.name,
        report: &c.report,
        residual: &c.residual,
        retraining_required: c.retraining_required(),
        source_model: a.model.display().to_string(),
        verification,
    };
    let manifest_path = a.out_dir.join(format!("{stem}.manifest.json"));
    io::write(&manifest_path, &to_pretty(&manifest))?;

    if a.json {
        print!("{}", to_pretty(&manifest));
    } else {
        print_conversion(&manifest, &a.out_dir, &manifest_path);
    }
    Ok(if c.residual.deployable_as_is && verify_pass {
        0
    } else {
        1
    })
}

fn print_conversion(m: &ConvertManifest, dir: &Path, manifest_path: &Path) {
    println!("profile: {}", m.profile);
    if m.applied.is_empty() {
        println!("applied: none");
    } else {
        let mut t = Table::new(["NODE", "SCENARIO", "RULE", "RETRAIN"]);
        for r in m.applied {
            let retrain = if r.retraining_required { "yes" } else { "no" };
            t.row([r.node_id.as_str(), r.scenario.as_str(), r.rule_id.as_str(), retrain]);
        }
        print!("{}", t.render());
    }
    if let Some(cut) = m.cut_tensors {
        let names: Vec<&str> = cut.iter().map(|t| t.name.as_str()).collect();
        println!("split:   cut at {}", names.join(", "));
        if let Some(f) = m.fused_output_name {
            println!("fused:   prefix outputs packed into '{f}'");
        }
    }
    for op in m.custom_ops {
        println!(
            "custom:  {} ({} occurrence(s)) needs an implementation",
            op.op_type,
            op.occurrences.len()
        );
    }
    if m.retraining_required {
        println!("note:    converted model must be retrained");
    }
    if let Some(v) = &m.verification {
        let status = if v.pass { "pass" } else { "FAIL" };
        match &v.diff {
            Some(d) => println!(
                "verify:  {status} (max |diff| {:.3e}, tol {:e}, {} trials)",
                d.max_abs_diff(),
                d.tolerance,
                d.trials
            ),
            None => println!("verify:  {status} ({}: {})", v.kind, v.note.as_deref().unwrap_or("")),
        }
    }
    if !m.residual.deployable_as_is {
        let left: Vec<&str> = m.residual.unsupported.iter().map(|a| a.node_id.as_str()).collect();
        println!("residual: still unsupported: {}", left.join(", "));
        for v in &m.residual.structural_violations {
            println!("residual: {v}");
        }
    }
    println!("wrote:   {}", dir.join(&m.deploy_model).display());
    if let Some(p) = &m.postprocess_model {
        println!("wrote:   {}", dir.join(p).display());
    }
    println!("wrote:   {}", manifest_path.display());
}

#[derive(Serialize)]
struct RunOutput<'a> {
    #[serde(skip_serializing_if = "Option::is_none")]
    bench: Option<&'a BenchReport>,
    outputs: BTreeMap<&'a str, io::TensorOut>,
}

fn preview(v: &[f64]) -> String {
    const SHOWN: usize = 6;
    let head: Vec<String> = v.iter().take(SHOWN).map(|x| format!("{x:.4}")).collect();
    let more = if v.len() > SHOWN { ", ..." } else { "" };
    format!("[{}{more}]", head.join(", "))
}

pub fn run(a: RunArgs) -> Result<u8> {
    let g = load_model(&a.model)?;
    let inputs: TensorMap = match &a.inputs {
        Some(path) => io::load_tensors(path)?,
        None => random_inputs(g.inputs(), a.seed, 0),
    };
    let outputs = run_graph(&g, &inputs)?;
    let report = match a.bench {
        Some(0) => return Err(anyhow!(Usage("--bench needs at least one repetition".into()))),
        Some(n) => Some(bench(&g, &inputs, n)?),
        None => None,
    };
    if let Some(out) = &a.out {
        io::write(out, &to_pretty(&io::tensors_json(&outputs)))?;
    }
    if a.json {
        let r = RunOutput {
            bench: report.as_ref(),
            outputs: io::tensors_json(&outputs),
        };
        print!("{}", to_pretty(&r));
        return Ok(0);
    }
    let mut t = Table::new(["OUTPUT", "DTYPE", "SHAPE", "VALUES"]);
    for (name, v) in &outputs {
        t.row([
            name.clone(),
            v.dtype().to_string(),
            format!("{:?}", v.shape()),
            preview(&v.to_f64_vec()),
        ]);
    }
    print!("{}", t.render());
    if let Some(b) = &report {
        let lat = &b.wall_latency_ms;
        let mean = lat.iter().sum::<f64>() / lat.len() as f64;
        let min = lat.iter().copied().fold(f64::INFINITY, f64::min);
        let max = lat.iter().copied().fold(0.0, f64::max);
        println!("\nrepetitions: {}", lat.len());
        println!("latency ms:  mean {mean:.4}  min {min:.4}  max {max:.4}");
        println!("throughput:  {:.1} inferences/s", b.throughput_inferences_per_s);
        println!("MACs:        {}", b.multiply_accumulate_count);
        println!("peak bytes:  {}", b.peak_live_tensor_bytes);
    }
    Ok(0)
}

pub fn diff(a: DiffArgs) -> Result<u8> {
    let ga = load_model(&a.a)?;
    let gb = load_model(&a.b)?;
    let v = &a.verify_args;
    let d = diff_graphs(&ga, &gb, v.trials, v.tol, v.seed)?;
    if a.json {
        print!("{}", to_pretty(&d));
    } else {
        let mut t = Table::new(["OUTPUT", "SHAPE A", "SHAPE B", "MAX |DIFF|"]);
        for o in &d.outputs {
            t.row([
                o.name.clone(),
                format!("{:?}", o.shape_a),
                format!("{:?}", o.shape_b),
                format!("{:.3e}", o.max_abs_diff),
            ]);
        }
        print!("{}", t.render());
        let status = if d.pass { "PASS" } else { "FAIL" };
        println!("{status} (tol {:e}, {} trials, seed {})", d.tolerance, d.trials, d.seed);
    }
    if d.pass {
        Ok(0)
    } else {
        Err(anyhow!(Failed(format!(
            "outputs differ by up to {:e} (tolerance {:e})",
            d.max_abs_diff(),
            d.tolerance
        ))))
    }
}

fn describe(p: &CapabilityProfile) {
    println!("name:          {}", p.name);
    println!("description:   {}", p.description);
    let hw: Vec<&str> = p.hardware_targets.iter().map(String::as_str).collect();
    println!("hardware:      {}", hw.join(", "));
    println!("single output: {}", p.single_output_only);
    match p.max_input_pixels {
        Some(n) => println!("max pixels:    {n}"),
        None => println!("max pixels:    unlimited"),
    }
    let ops: Vec<&str> = p.supported_ops.iter().map(String::as_str).collect();
    println!("ops ({}):      {}", ops.len(), ops.join(", "));
}

pub fn profiles(a: ProfilesArgs) -> Result<u8> {
    match a.action {
        ProfilesAction::List => {
            let all = all_profiles()?;
            if a.json {
                print!("{}", to_pretty(&all));
                return Ok(0);
            }
            let mut t = Table::new(["NAME", "OPS", "SINGLE OUTPUT", "MAX PIXELS", "DESCRIPTION"]);
            for p in &all {
                t.row([
                    p.name.clone(),
                    p.supported_ops.len().to_string(),
                    p.single_output_only.to_string(),
                    p.max_input_pixels.map_or("-".into(), |n| n.to_string()),
                    p.description.clone(),
                ]);
            }
            print!("{}", t.render());
        }
        ProfilesAction::Show { name } => {
            let p = resolve_profile(&name)?;
            if a.json {
                print!("{}", serialize_profile(&p));
            } else {
                describe(&p);
            }
        }
    }
    Ok(0)
}
