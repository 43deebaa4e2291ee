use std::io::Write;

use anyhow::Context;
use clap::Parser;

use fakescope_service::commands::{self, Command};

#[derive(Debug, Parser)]
#[command(name = "fakescope", version, about = "Explainable real-vs-fake image forensics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Train(args) => {
            let report = commands::train(&args).context("training failed")?;
            let model = fakescope_core::detector::DetectorModel::load(&args.out)?;
            println!(
                "trained {} epochs (best {}), val accuracy {}, {}",
                report.history.len() - 1,
                report.best_epoch,
                report.val.accuracy.map_or("n/a".into(), |a| format!("{a:.4}")),
                commands::describe_model(&model)
            );
            if let Some(test) = report.test {
                println!(
                    "test accuracy {}",
                    test.accuracy.map_or("n/a".into(), |a| format!("{a:.4}"))
                );
            }
            println!("checkpoint {}", args.out.display());
        }
        Command::Analyze(args) => {
            let meta = commands::analyze(&args).context("analysis failed")?;
            println!(
                "snapshot {} with {} images in {} cells ({} failed)",
                meta.snapshot_id,
                meta.image_count,
                meta.cell_count,
                meta.errors.len()
            );
        }
        Command::Serve(args) => {
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(async {
                let (store, listener) = commands::prepare_serve(&args).await?;
                println!("listening on http://{}/api/v1", listener.local_addr()?);
                fakescope_service::api::serve(store, listener).await?;
                anyhow::Ok(())
            })?;
        }
        Command::Export(args) => {
            let mut stdout = std::io::stdout().lock();
            let n = commands::export(&args, &mut stdout).context("export failed")?;
            stdout.flush()?;
            if args.out.is_some() {
                eprintln!(
                    "exported {n} {}",
                    if args.what == commands::ExportKind::Relevance {
                        "stacks"
                    } else {
                        "bytes"
                    }
                );
            }
        }
        Command::Projection(args) => {
            commands::projection(&args).context("projection failed")?;
            println!("projection {}", args.out.display());
        }
        Command::DemoCorpus(args) => {
            commands::demo_corpus(&args).context("corpus generation failed")?;
            println!("corpus {}", args.out.display());
        }
    }
    Ok(())
}
