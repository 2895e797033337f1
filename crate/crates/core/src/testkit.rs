//! Small in-memory knowledge bases for unit tests.

use crate::concept::{build_corpus_concept_graph, BuildCheckpoint, ConceptBuildOptions};
use crate::gateway::Gateway;
use crate::index::index_chunks;
use crate::ingest::{chunk_document, parse_document_with_id, ChunkPolicy, InputFormat, TokenEstimator};
use crate::instance::{build_instance_graph, InstanceBuildOptions, InstanceCheckpoint};
use crate::retriever::KnowledgeBase;

pub const MANUAL: &str = "\
# Storage Engine

The storage engine keeps pages in memory and writes changes through a log.

## Buffer Pool

The buffer pool caches disk pages in shared memory.

### Pool Sizing

The buffer pool size is set in megabytes. buffer_pool_size = 4096

Larger pools reduce disk reads for hot tables.

### Page Eviction

The eviction thread removes cold pages when the pool is full. Eviction uses a clock sweep.

## Write-Ahead Log

The write-ahead log records every change before pages are flushed.

### Checkpoints

A checkpoint flushes dirty pages and truncates the log. checkpoint_interval = 300

# Replication

Replication copies the log stream from a primary server to replica servers.

## Replica Setup

### Configuring Replicas

Step 1: Set the primary address on the replica.
Step 2: Start the replica service.

The replica connects to the primary port. replication_port = 7400

### Monitoring Lag

The monitor reports replication lag in seconds. Error E1205 means the replica lost its connection.
";

pub fn policy() -> ChunkPolicy {
    ChunkPolicy::new(64, 8, 0, TokenEstimator::CharsPerToken4).unwrap()
}

pub fn build(md: &str, gateway: &Gateway) -> KnowledgeBase {
    let doc = parse_document_with_id(md, InputFormat::MarkdownWithHeadings, Some("manual")).unwrap();
    let chunks = chunk_document(&doc, &policy());
    let docs = [doc];
    let cg = build_corpus_concept_graph(&docs, None, gateway, &ConceptBuildOptions::default(), &mut BuildCheckpoint::default())
        .unwrap();
    let (ig, _) = build_instance_graph(&docs, &chunks, &cg, gateway, &InstanceBuildOptions::default(), &mut InstanceCheckpoint::default())
        .unwrap();
    let index = index_chunks(&chunks, gateway, None).unwrap();
    KnowledgeBase::new(cg, ig, index, chunks)
}

pub fn manual() -> KnowledgeBase {
    build(MANUAL, &Gateway::mock())
}
