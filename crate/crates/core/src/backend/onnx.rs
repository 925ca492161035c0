//! [`LogitsModel`] over an exported ONNX graph, run with tract.
//!
//! The graph must expose an `int64` input named `input_ids`, optionally an
//! `int64` `attention_mask`, and a float output named `logits` (or a single
//! output). A concrete plan is optimized once per `(batch, seq)` shape and
//! cached.

use std::collections::HashMap;
use std::path::Path;
use std::sync::{Arc, Mutex};

use tract_onnx::prelude::*;

use crate::backend::neural::{GraphInputs, LogitsModel, LogitsTensor, ModelKind, ATTENTION_MASK, INPUT_IDS, LOGITS};
use crate::error::{Error, Result};

type Plan = TypedSimplePlan<TypedModel>;

fn tract_err(context: &str) -> impl Fn(TractError) -> Error + '_ {
    move |e| Error::Backend(format!("{context}: {e:#}"))
}

pub struct OnnxModel {
    graph: InferenceModel,
    ids_input: usize,
    mask_input: Option<usize>,
    kind: ModelKind,
    vocab_size: usize,
    max_sequence_length: usize,
    plans: Mutex<HashMap<[usize; 2], Arc<Plan>>>,
}

impl OnnxModel {
    pub fn load(
        path: impl AsRef<Path>,
        kind: ModelKind,
        vocab_size: usize,
        max_sequence_length: usize,
    ) -> Result<Self> {
        let path = path.as_ref();
        let graph = tract_onnx::onnx()
            .model_for_path(path)
            .map_err(|e| Error::Backend(format!("loading {}: {e:#}", path.display())))?;
        Self::from_graph(graph, kind, vocab_size, max_sequence_length)
    }

    pub fn from_proto(
        proto: &tract_onnx::pb::ModelProto,
        kind: ModelKind,
        vocab_size: usize,
        max_sequence_length: usize,
    ) -> Result<Self> {
        let graph = tract_onnx::onnx()
            .model_for_proto_model(proto)
            .map_err(tract_err("parsing model"))?;
        Self::from_graph(graph, kind, vocab_size, max_sequence_length)
    }

    fn from_graph(
        mut graph: InferenceModel,
        kind: ModelKind,
        vocab_size: usize,
        max_sequence_length: usize,
    ) -> Result<Self> {
        let inputs = graph.input_outlets().map_err(tract_err("reading inputs"))?.to_vec();
        let input_index = |name: &str| inputs.iter().position(|o| graph.node(o.node).name == name);
        let ids_input =
            input_index(INPUT_IDS).ok_or_else(|| Error::Backend(format!("graph has no `{INPUT_IDS}` input")))?;
        let mask_input = input_index(ATTENTION_MASK);
        if inputs.len() != 1 + usize::from(mask_input.is_some()) {
            return Err(Error::Backend(format!(
                "graph takes {} inputs; expected `{INPUT_IDS}` and optionally `{ATTENTION_MASK}`",
                inputs.len()
            )));
        }

        let outputs = graph.output_outlets().map_err(tract_err("reading outputs"))?.to_vec();
        let logits = outputs
            .iter()
            .copied()
            .find(|&o| graph.outlet_label(o) == Some(LOGITS) || graph.node(o.node).name == LOGITS)
            .or_else(|| (outputs.len() == 1).then(|| outputs[0]))
            .ok_or_else(|| Error::Backend(format!("graph has no `{LOGITS}` output")))?;
        graph
            .set_output_outlets(&[logits])
            .map_err(tract_err("selecting logits output"))?;

        if vocab_size == 0 || max_sequence_length == 0 {
            return Err(Error::Config(
                "vocab size and max sequence length must be positive".into(),
            ));
        }
        Ok(OnnxModel {
            graph,
            ids_input,
            mask_input,
            kind,
            vocab_size,
            max_sequence_length,
            plans: Mutex::new(HashMap::new()),
        })
    }

    fn plan(&self, shape: [usize; 2]) -> Result<Arc<Plan>> {
        if let Some(p) = self.plans.lock().expect("plan cache poisoned").get(&shape) {
            return Ok(Arc::clone(p));
        }
        let mut graph = self.graph.clone();
        let fact = InferenceFact::dt_shape(i64::datum_type(), shape.to_vec());
        graph
            .set_input_fact(self.ids_input, fact.clone())
            .map_err(tract_err("setting input shape"))?;
        if let Some(m) = self.mask_input {
            graph.set_input_fact(m, fact).map_err(tract_err("setting mask shape"))?;
        }
        let plan = graph
            .into_optimized()
            .and_then(|m| m.into_runnable())
            .map_err(tract_err("optimizing model"))?;
        let plan = Arc::new(plan);
        self.plans
            .lock()
            .expect("plan cache poisoned")
            .insert(shape, Arc::clone(&plan));
        Ok(plan)
    }
}

impl LogitsModel for OnnxModel {
    fn kind(&self) -> ModelKind {
        self.kind
    }

    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn max_sequence_length(&self) -> usize {
        self.max_sequence_length
    }

    fn concurrent(&self) -> bool {
        true
    }

    fn run(&self, inputs: &GraphInputs) -> Result<LogitsTensor> {
        let plan = self.plan(inputs.shape)?;
        let tensor = |data: &[i64]| Tensor::from_shape(&inputs.shape, data).map_err(tract_err("building input"));
        let mut feed: Vec<(usize, TValue)> = vec![(self.ids_input, tensor(&inputs.input_ids)?.into())];
        if let Some(m) = self.mask_input {
            feed.push((m, tensor(&inputs.attention_mask)?.into()));
        }
        feed.sort_by_key(|(i, _)| *i);
        let out = plan
            .run(feed.into_iter().map(|(_, t)| t).collect())
            .map_err(tract_err("running model"))?;
        let logits = out[0].cast_to::<f32>().map_err(tract_err("reading logits"))?;
        let shape: [usize; 3] = logits
            .shape()
            .try_into()
            .map_err(|_| Error::Shape(format!("logits have shape {:?}, expected rank 3", logits.shape())))?;
        let data = logits.as_slice::<f32>().map_err(tract_err("reading logits"))?.to_vec();
        LogitsTensor::new(shape, data)
    }
}
