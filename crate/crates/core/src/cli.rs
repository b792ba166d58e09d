//! Command-line interface: simulate, profile-difficulty, train-toy, synth,
//! eval, judge, and report, over a shared JSON config with flag overrides.
//!
//! Exit codes: 0 success, 1 validation error (arguments, config, inputs),
//! 2 runtime failure. Outputs are written atomically and every run leaves a
//! resolved-config snapshot next to its outputs.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::agents::mock::FailingAgent;
use crate::agents::{
    Agent, FactTable, MockCloudAgent, PromptTemplates, RemoteChatAgent, ScriptedLocalAgent,
};
use crate::config::{ConfigError, RunConfig};
use crate::data::{read_jsonl, write_atomic, write_jsonl, Query};
use crate::difficulty::{profile_dataset, LabelRule};
use crate::metrics::{
    evaluate, judge_leak, render_markdown, EvalReport, LlmJudge, PrivacyJudge, RuleBasedJudge,
    Scorer, Verdict,
};
use crate::orchestrator::{run_batch, EpisodeRecord};
use crate::privsynth::mock::{toy_fact_table, RuleCheckAgent, RuleMockGen};
use crate::privsynth::{synthesize_corpus, Provenance, QaPair};
use crate::rl::factworld::{build_fact_world, FactWorldSpec};
use crate::rl::policy::TokenPolicy;
use crate::rl::rollout::{Driver, FeatureMap, PolicyAgent, SamplerCfg};
use crate::rl::train::train_loop;
use crate::rl::value::LinearValue;

#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Runtime(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

fn validation(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

fn runtime(msg: impl std::fmt::Display) -> CliError {
    CliError::Runtime(msg.to_string())
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<crate::data::IoError> for CliError {
    fn from(e: crate::data::IoError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "colab-forge",
    version,
    about = "Train and evaluate a dynamic local/cloud model collaboration policy"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// JSON config file; flags override file values which override defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    concurrency: Option<usize>,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = RunConfig::load_or_default(self.config.as_deref())?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(c) = self.concurrency {
            if c == 0 {
                return Err(validation("--concurrency must be at least 1"));
            }
            cfg.concurrency.0 = c;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run collaboration episodes over a dataset and write episode records.
    Simulate(SimulateArgs),
    /// Label queries easy/hard by probing the local agent without assistance.
    ProfileDifficulty(ProfileArgs),
    /// Train the toy policy on a FactWorld environment.
    TrainToy(TrainArgs),
    /// Run the privacy-injection pipeline over plain QA pairs.
    Synth(SynthArgs),
    /// Aggregate episode records into the metric report.
    Eval(EvalArgs),
    /// Judge privacy leakage of recorded episodes.
    Judge(JudgeArgs),
    /// Render metric reports from one or more runs as markdown.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    /// Query dataset (JSONL).
    #[arg(long)]
    data: PathBuf,
    /// Local agent: mock:solo | mock:forward | mock:fail | policy:<ckpt.json> | http(s)://…[#model]
    #[arg(long)]
    local: String,
    /// Cloud agent: mock:<facts.json> | factworld:<env.json> | http(s)://…[#model]
    #[arg(long)]
    cloud: String,
    #[arg(long)]
    n_max: Option<usize>,
    /// Difficulty labels; when given, each episode record carries its full
    /// reward breakdown.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Judge for the privacy component when scoring: rule | llm:<endpoint>
    #[arg(long, default_value = "rule")]
    judge: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ProfileArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    local: String,
    #[arg(long)]
    k: Option<usize>,
    /// any | majority
    #[arg(long)]
    rule: Option<String>,
    /// Label cache keyed by (model tag, k, rule).
    #[arg(long)]
    cache: Option<PathBuf>,
    #[arg(long)]
    model_tag: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// FactWorld spec (JSON); defaults to the built-in desk-scale world.
    #[arg(long)]
    env: Option<PathBuf>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    warmstart: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    policy_lr: Option<f64>,
    #[arg(long)]
    value_lr: Option<f64>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    alpha_len: Option<f64>,
    /// Fixed GAE λ (overrides the length-adaptive rule).
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    eval_every: Option<usize>,
    /// tabular | mlp
    #[arg(long, default_value = "mlp")]
    policy: String,
    /// Output run directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[command(flatten)]
    common: Common,
    /// Source QA pairs (JSONL: question, answers[], source).
    #[arg(long = "in")]
    input: PathBuf,
    /// Generator agent: rulemock[:seed] | http(s)://…[#model]
    #[arg(long)]
    gen: String,
    /// Checker agent: rulemock | http(s)://…[#model]
    #[arg(long)]
    check: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    stats: PathBuf,
    /// Also emit a cloud fact table covering the source corpus.
    #[arg(long)]
    facts_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    episodes: PathBuf,
    /// Difficulty labels (JSONL) for the interaction-necessity score.
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    /// rule | llm:<agent spec>
    #[arg(long, default_value = "rule")]
    judge: String,
    /// tokenf1 | embed:<base-url>[#model]
    #[arg(long, default_value = "tokenf1")]
    scorer: String,
    #[arg(long)]
    out: PathBuf,
    /// Also print the report as a markdown table.
    #[arg(long)]
    markdown: bool,
}

#[derive(Args, Debug)]
struct JudgeArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    episodes: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "rule")]
    judge: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ReportArgs {
    #[command(flatten)]
    common: Common,
    /// Run directories or report.json files.
    #[arg(long, num_args = 1..)]
    runs: Vec<PathBuf>,
    #[arg(long)]
    markdown: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Load a query dataset, assigning stable ids to records that lack one.
pub fn load_queries(path: &Path) -> Result<Vec<Query>, CliError> {
    let mut queries: Vec<Query> = read_jsonl(path)?;
    for (i, q) in queries.iter_mut().enumerate() {
        if q.id.is_empty() {
            q.id = format!("q{i:05}");
        }
    }
    Ok(queries)
}

fn snapshot_path(out: &Path) -> PathBuf {
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().to_string())
        .unwrap_or_else(|| "run".to_string());
    out.with_file_name(format!("{stem}.config.json"))
}

fn templates_for(cfg: &RunConfig) -> Result<PromptTemplates, CliError> {
    match &cfg.agents.templates_dir {
        Some(dir) => PromptTemplates::load_dir(Path::new(dir)).map_err(|e| validation(e.to_string())),
        None => Ok(PromptTemplates::default()),
    }
}

fn split_http_spec(spec: &str) -> (String, Option<String>) {
    match spec.split_once('#') {
        Some((base, model)) => (base.to_string(), Some(model.to_string())),
        None => (spec.to_string(), None),
    }
}

fn remote_agent(spec: &str, cfg: &RunConfig) -> Result<Box<dyn Agent>, CliError> {
    let (base, model) = split_http_spec(spec);
    let model = model.unwrap_or_else(|| cfg.agents.model.clone());
    Ok(Box::new(
        RemoteChatAgent::new(base, model).with_max_retries(cfg.agents.max_retries),
    ))
}

/// Build the local agent from its spec string. `queries` backs the solo
/// mock's answer table; `solo` disables message emission for policy agents.
fn build_local_agent(
    spec: &str,
    queries: &[Query],
    cfg: &RunConfig,
    solo: bool,
) -> Result<Box<dyn Agent>, CliError> {
    if spec.starts_with("http://") || spec.starts_with("https://") {
        return remote_agent(spec, cfg);
    }
    match spec {
        "mock:solo" => Ok(Box::new(ScriptedLocalAgent::solo(
            queries
                .iter()
                .filter(|q| !q.answers.is_empty())
                .map(|q| (q.question.clone(), q.answers[0].clone())),
        ))),
        "mock:forward" => Ok(Box::new(ScriptedLocalAgent::forward_raw())),
        "mock:fail" => Ok(Box::new(FailingAgent)),
        "env" => {
            let agent = RemoteChatAgent::from_env(cfg.agents.model.clone())
                .map_err(|e| validation(e.to_string()))?;
            Ok(Box::new(agent.with_max_retries(cfg.agents.max_retries)))
        }
        other => match other.strip_prefix("policy:") {
            Some(path) => {
                let policy = TokenPolicy::<f64>::load(Path::new(path))
                    .map_err(|e| validation(format!("cannot load policy checkpoint: {e}")))?;
                let vocab = Arc::new(crate::rl::factworld::ToyVocab::new());
                if policy.vocab_size != vocab.len() {
                    return Err(validation(format!(
                        "checkpoint vocab size {} does not match the toy vocabulary ({})",
                        policy.vocab_size,
                        vocab.len()
                    )));
                }
                let fmap = Arc::new(FeatureMap::new(vocab));
                let agent = PolicyAgent::new(
                    fmap,
                    SamplerCfg {
                        think_cap: cfg.train.think_cap,
                        msg_cap: cfg.train.msg_cap,
                        ans_cap: cfg.train.ans_cap,
                    },
                    cfg.episode.n_max,
                    Driver::Policy { policy: Arc::new(policy), temperature: 1.0, greedy: true },
                    None,
                    cfg.seed,
                )
                .with_solo(solo);
                Ok(Box::new(agent))
            }
            None => Err(validation(format!("unknown local agent spec {other:?}"))),
        },
    }
}

fn build_cloud_agent(spec: &str, cfg: &RunConfig) -> Result<Box<dyn Agent>, CliError> {
    if spec.starts_with("http://") || spec.starts_with("https://") {
        return remote_agent(spec, cfg);
    }
    if spec == "env" {
        let agent = RemoteChatAgent::from_env(cfg.agents.model.clone())
            .map_err(|e| validation(e.to_string()))?;
        return Ok(Box::new(agent.with_max_retries(cfg.agents.max_retries)));
    }
    if let Some(path) = spec.strip_prefix("mock:") {
        let table = FactTable::from_path(Path::new(path))
            .map_err(|e| validation(format!("cannot load fact table: {e}")))?;
        return Ok(Box::new(MockCloudAgent::new(table)));
    }
    if let Some(path) = spec.strip_prefix("factworld:") {
        let text = std::fs::read_to_string(path)
            .map_err(|e| validation(format!("cannot read env spec {path}: {e}")))?;
        let env: FactWorldSpec = serde_json::from_str(&text)
            .map_err(|e| validation(format!("invalid env spec {path}: {e}")))?;
        let world = build_fact_world(&env).map_err(|e| validation(e.to_string()))?;
        return Ok(Box::new(world.cloud_agent()));
    }
    Err(validation(format!("unknown cloud agent spec {spec:?}")))
}

fn build_scorer(spec: &str) -> Result<Scorer, CliError> {
    if spec == "tokenf1" {
        return Ok(Scorer::TokenF1);
    }
    if let Some(rest) = spec.strip_prefix("embed:") {
        let (base, model) = split_http_spec(rest);
        return Ok(Scorer::RemoteEmbedding(crate::metrics::EmbeddingClient {
            base_url: base,
            model: model.unwrap_or_else(|| "default".into()),
            api_key: std::env::var(crate::agents::remote::API_KEY_ENV).ok(),
        }));
    }
    Err(validation(format!("unknown scorer spec {spec:?} (expected tokenf1 or embed:<url>)")))
}

fn build_judge(spec: &str, cfg: &RunConfig) -> Result<Box<dyn PrivacyJudge>, CliError> {
    if spec == "rule" {
        return Ok(Box::new(RuleBasedJudge));
    }
    if let Some(agent_spec) = spec.strip_prefix("llm:") {
        let agent: Arc<dyn Agent> = Arc::from(remote_agent(agent_spec, cfg)?);
        return Ok(Box::new(LlmJudge {
            agent,
            templates: templates_for(cfg)?,
            params: cfg.generation_params(),
        }));
    }
    Err(validation(format!("unknown judge spec {spec:?} (expected rule or llm:<endpoint>)")))
}

fn labels_map(path: Option<&Path>) -> Result<HashMap<String, bool>, CliError> {
    let Some(path) = path else {
        return Ok(HashMap::new());
    };
    let labels: Vec<crate::difficulty::DifficultyLabel> = read_jsonl(path)?;
    Ok(labels.into_iter().map(|l| (l.query_id, l.is_easy)).collect())
}

fn cmd_simulate(args: SimulateArgs) -> Result<(), CliError> {
    let mut cfg = args.common.resolve()?;
    if let Some(n_max) = args.n_max {
        cfg.episode.n_max = n_max;
    }
    let queries = load_queries(&args.data)?;
    let templates = templates_for(&cfg)?;
    let local = build_local_agent(&args.local, &queries, &cfg, false)?;
    let cloud = build_cloud_agent(&args.cloud, &cfg)?;
    let mut records = run_batch(
        &queries,
        local.as_ref(),
        cloud.as_ref(),
        &cfg.episode_config(),
        &templates,
        cfg.concurrency.0,
    );
    if let Some(labels_path) = &args.labels {
        let labels = labels_map(Some(labels_path))?;
        let judge = build_judge(&args.judge, &cfg)?;
        let by_id: HashMap<&str, &Query> = queries.iter().map(|q| (q.id.as_str(), q)).collect();
        for rec in &mut records {
            let Some(query) = by_id.get(rec.query_id.as_str()) else { continue };
            let is_easy = labels.get(&rec.query_id).copied().unwrap_or(false);
            rec.reward = crate::rewards::score_episode(
                rec,
                query,
                is_easy,
                cfg.episode.n_max,
                judge.as_ref(),
                cfg.reward_weights(),
            )
            .ok();
        }
    }
    let failed = records.iter().filter(|r| r.failed).count();
    write_jsonl(&args.out, &records)?;
    cfg.write_snapshot(&snapshot_path(&args.out))?;
    eprintln!(
        "simulated {} episodes ({} failed) -> {}",
        records.len(),
        failed,
        args.out.display()
    );
    if failed == records.len() && !records.is_empty() {
        return Err(runtime("every episode failed"));
    }
    Ok(())
}

fn cmd_profile(args: ProfileArgs) -> Result<(), CliError> {
    let cfg = args.common.resolve()?;
    let queries = load_queries(&args.data)?;
    let templates = templates_for(&cfg)?;
    let local = build_local_agent(&args.local, &queries, &cfg, true)?;
    let k = args.k.unwrap_or(cfg.difficulty.k);
    if k == 0 {
        return Err(validation("--k must be at least 1"));
    }
    let rule = match args.rule.as_deref() {
        None => cfg.difficulty.rule,
        Some("any") => LabelRule::Any,
        Some("majority") => LabelRule::Majority,
        Some(other) => return Err(validation(format!("unknown rule {other:?}"))),
    };
    let model_tag = args.model_tag.clone().unwrap_or_else(|| local.tag());
    let mut ep_cfg = cfg.episode_config();
    ep_cfg.params.temperature = 0.0;
    let labels = profile_dataset(
        &queries,
        local.as_ref(),
        &ep_cfg,
        &templates,
        k,
        rule,
        &model_tag,
        args.cache.as_deref(),
        cfg.concurrency.0,
    )
    .map_err(runtime)?;
    let rows: Vec<_> = queries.iter().filter_map(|q| labels.get(&q.id)).collect();
    write_jsonl(&args.out, &rows)?;
    cfg.write_snapshot(&snapshot_path(&args.out))?;
    let easy = rows.iter().filter(|l| l.is_easy).count();
    eprintln!("labeled {} queries ({easy} easy) -> {}", rows.len(), args.out.display());
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<(), CliError> {
    let mut cfg = args.common.resolve()?;
    if let Some(v) = args.steps {
        cfg.train.steps = v;
    }
    if let Some(v) = args.warmstart {
        cfg.train.warmstart_steps = v;
    }
    if let Some(v) = args.alpha {
        cfg.rewards.alpha = v;
    }
    if let Some(v) = args.beta {
        cfg.rewards.beta = v;
    }
    if let Some(v) = args.batch {
        cfg.train.batch_episodes = v;
    }
    if let Some(v) = args.policy_lr {
        cfg.train.policy_lr = v;
    }
    if let Some(v) = args.value_lr {
        cfg.train.value_lr = v;
    }
    if let Some(v) = args.hidden {
        cfg.train.hidden = v;
    }
    if let Some(v) = args.alpha_len {
        cfg.gae.alpha_len = v;
    }
    if args.lambda.is_some() {
        cfg.gae.lambda = args.lambda;
    }
    if let Some(v) = args.gamma {
        cfg.gae.gamma = v;
    }
    if let Some(v) = args.eval_every {
        cfg.train.eval_every = v;
    }

    let env = match &args.env {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| validation(format!("cannot read env spec: {e}")))?;
            serde_json::from_str::<FactWorldSpec>(&text)
                .map_err(|e| validation(format!("invalid env spec: {e}")))?
        }
        None => FactWorldSpec::default(),
    };
    let world = build_fact_world(&env).map_err(|e| validation(e.to_string()))?;
    let fmap = FeatureMap::new(Arc::clone(&world.vocab));
    let train_cfg = cfg.train_config(None);

    let mut rng = ChaCha8Rng::seed_from_u64(train_cfg.seed);
    let mut policy = match args.policy.as_str() {
        "mlp" => TokenPolicy::<f64>::tiny_mlp(world.vocab.len(), fmap.dim, train_cfg.hidden, &mut rng),
        "tabular" => TokenPolicy::<f64>::tabular_bigram(world.vocab.len()),
        other => return Err(validation(format!("unknown policy kind {other:?}"))),
    };
    let mut vm = LinearValue::<f64>::new(fmap.dim);

    std::fs::create_dir_all(&args.out).map_err(|e| runtime(format!("cannot create run dir: {e}")))?;
    let report = train_loop(&world, &mut policy, &mut vm, &train_cfg).map_err(runtime)?;

    policy.save(&args.out.join("policy.json")).map_err(runtime)?;
    write_atomic(
        &args.out.join("value.json"),
        serde_json::to_string_pretty(&vm).expect("value").as_bytes(),
    )?;
    report.save(&args.out)?;
    write_atomic(
        &args.out.join("env.json"),
        serde_json::to_string_pretty(&env).expect("env").as_bytes(),
    )?;
    cfg.write_snapshot(&args.out.join("config.json"))?;

    let fe = &report.final_eval;
    eprintln!(
        "trained {} steps; held-out quality {:.3}, turns {:.3}, in_score {}, priv_sample {:.3} -> {}",
        report.steps_run,
        fe.quality,
        fe.avg_turns,
        fe.in_score.map(|s| format!("{s:.3}")).unwrap_or_else(|| "-".into()),
        fe.priv_sample,
        args.out.display()
    );
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> Result<(), CliError> {
    let cfg = args.common.resolve()?;
    let inputs: Vec<QaPair> = read_jsonl(&args.input)?;
    let templates = templates_for(&cfg)?;
    let params = cfg.generation_params();

    let (gen, provenance): (Box<dyn Agent>, Provenance) = if args.gen.starts_with("rulemock") {
        let seed = args
            .gen
            .strip_prefix("rulemock")
            .and_then(|s| s.strip_prefix(':'))
            .map(|s| s.parse::<u64>().map_err(|_| validation("bad rulemock seed")))
            .transpose()?
            .unwrap_or(cfg.seed);
        (Box::new(RuleMockGen::new(seed)), Provenance::RuleMock)
    } else {
        (remote_agent(&args.gen, &cfg)?, Provenance::LlmGenerated)
    };
    let check: Box<dyn Agent> = if args.check.starts_with("rulemock") {
        Box::new(RuleCheckAgent::from_corpus(&inputs))
    } else {
        remote_agent(&args.check, &cfg)?
    };

    let out = synthesize_corpus(
        &inputs,
        gen.as_ref(),
        check.as_ref(),
        &templates,
        &params,
        provenance,
        cfg.concurrency.0,
    );
    write_jsonl(&args.out, &out.items)?;
    write_atomic(
        &args.stats,
        serde_json::to_string_pretty(&out.stats).expect("stats").as_bytes(),
    )?;
    if let Some(facts_path) = &args.facts_out {
        let table = toy_fact_table(&inputs);
        write_atomic(
            facts_path,
            serde_json::to_string_pretty(&table).expect("facts").as_bytes(),
        )?;
    }
    cfg.write_snapshot(&snapshot_path(&args.out))?;
    eprintln!(
        "synthesized {} items from {} inputs ({} rejected) -> {}",
        out.stats.samples,
        inputs.len(),
        out.stats.rejection_breakdown.values().sum::<usize>(),
        args.out.display()
    );
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<(), CliError> {
    let cfg = args.common.resolve()?;
    let episodes: Vec<EpisodeRecord> = read_jsonl(&args.episodes)?;
    let queries = load_queries(&args.data)?;
    let labels = labels_map(args.labels.as_deref())?;
    let judge = build_judge(&args.judge, &cfg)?;
    let scorer = build_scorer(&args.scorer)?;
    let report: EvalReport<f64> = evaluate(&episodes, &queries, &labels, &scorer, judge.as_ref());
    write_atomic(
        &args.out,
        serde_json::to_string_pretty(&report).expect("report").as_bytes(),
    )?;
    cfg.write_snapshot(&snapshot_path(&args.out))?;
    if args.markdown {
        println!("{}", render_markdown(&[("eval".to_string(), report.clone())]));
    }
    eprintln!(
        "evaluated {} episodes over {} sources -> {}",
        episodes.len(),
        report.per_source.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_judge(args: JudgeArgs) -> Result<(), CliError> {
    let cfg = args.common.resolve()?;
    let episodes: Vec<EpisodeRecord> = read_jsonl(&args.episodes)?;
    let queries = load_queries(&args.data)?;
    let by_id: HashMap<&str, &Query> = queries.iter().map(|q| (q.id.as_str(), q)).collect();
    let judge = build_judge(&args.judge, &cfg)?;
    let mut rows = Vec::new();
    let mut leaks = 0usize;
    for ep in &episodes {
        let items = by_id
            .get(ep.query_id.as_str())
            .map(|q| q.privacy_items.clone())
            .unwrap_or_default();
        let verdict = judge_leak(&ep.requests, &items, judge.as_ref());
        let leak = matches!(verdict, Ok(Verdict::Leak));
        leaks += usize::from(leak);
        rows.push(serde_json::json!({
            "query_id": ep.query_id,
            "leak": leak,
            "error": verdict.err().map(|e| e.to_string()),
            "requests": ep.requests,
        }));
    }
    write_jsonl(&args.out, &rows)?;
    cfg.write_snapshot(&snapshot_path(&args.out))?;
    eprintln!("judged {} episodes, {leaks} leaks -> {}", episodes.len(), args.out.display());
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<(), CliError> {
    let mut runs = Vec::new();
    for path in &args.runs {
        let file = if path.is_dir() { path.join("report.json") } else { path.clone() };
        let text = std::fs::read_to_string(&file)
            .map_err(|e| validation(format!("cannot read {}: {e}", file.display())))?;
        let report: EvalReport<f64> = serde_json::from_str(&text)
            .map_err(|e| validation(format!("invalid report {}: {e}", file.display())))?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().to_string())
            .unwrap_or_else(|| path.display().to_string());
        runs.push((name, report));
    }
    if runs.is_empty() {
        return Err(validation("no runs given"));
    }
    let markdown = render_markdown(&runs);
    match &args.out {
        Some(path) => write_atomic(path, markdown.as_bytes())?,
        None => println!("{markdown}"),
    }
    Ok(())
}

/// Parse argv and run. Returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::ProfileDifficulty(args) => cmd_profile(args),
        Command::TrainToy(args) => cmd_train(args),
        Command::Synth(args) => cmd_synth(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Judge(args) => cmd_judge(args),
        Command::Report(args) => cmd_report(args),
    };
    match result {
        Ok(()) => 0,
        Err(CliError::Validation(msg)) => {
            eprintln!("error: {msg}");
            1
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            2
        }
    }
}
