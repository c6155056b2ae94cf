use crate::bits::Bits;
use crate::circuit::{self, Circuit, Gate};
use crate::error::{Error, Result};
use crate::sharing::ShareVector;

use super::{PeerChannel, ProtocolContext};

impl<C: PeerChannel> ProtocolContext<C> {
    /// Evaluates `circuit` on XOR-shared inputs, bit-sliced: `inputs[w]` holds
    /// wire `w` for every instance. All AND gates of one depth share a round.
    pub fn eval_circuit(&mut self, circuit: &Circuit, inputs: &[Bits]) -> Result<Vec<Bits>> {
        if inputs.len() != circuit.num_inputs() {
            return Err(Error::Shape(format!(
                "circuit takes {} inputs, got {}",
                circuit.num_inputs(),
                inputs.len()
            )));
        }
        let instances = inputs.first().map_or(0, Bits::len);
        if inputs.iter().any(|b| b.len() != instances) {
            return Err(Error::Shape("input wires differ in instance count".into()));
        }
        let leader = self.is_leader();
        let offset = circuit.num_inputs();
        let mut wires: Vec<Bits> = Vec::with_capacity(circuit.num_wires());
        wires.extend_from_slice(inputs);
        wires.resize(circuit.num_wires(), Bits::default());
        let gates = circuit.gates();

        for layer in circuit.layers() {
            if !layer.ands.is_empty() && instances > 0 {
                let g = layer.ands.len();
                let t = self.triples.take_bool(g * instances)?;
                let mut masked = Bits::zeros(0);
                let mut xs = Bits::zeros(0);
                let mut ys = Bits::zeros(0);
                for &gi in &layer.ands {
                    let Gate::And(a, b) = gates[gi] else { unreachable!("layer lists only AND gates") };
                    xs.extend_from(&wires[a]);
                    ys.extend_from(&wires[b]);
                }
                let mut d = xs;
                d ^= &t.a;
                let mut e = ys;
                e ^= &t.b;
                masked.extend_from(&d);
                masked.extend_from(&e);
                let opened = self.open_bits(&masked)?;
                let total = g * instances;
                let (d, e) = (opened.slice(0, total), opened.slice(total, total));
                let mut z = t.c;
                let mut db = d.clone();
                db &= &t.b;
                z ^= &db;
                let mut ea = e.clone();
                ea &= &t.a;
                z ^= &ea;
                if leader {
                    let mut de = d;
                    de &= &e;
                    z ^= &de;
                }
                for (k, &gi) in layer.ands.iter().enumerate() {
                    wires[offset + gi] = z.slice(k * instances, instances);
                }
            } else if !layer.ands.is_empty() {
                for &gi in &layer.ands {
                    wires[offset + gi] = Bits::zeros(0);
                }
            }
            for &gi in &layer.linear {
                let value = match gates[gi] {
                    Gate::Xor(a, b) => {
                        let mut v = wires[a].clone();
                        v ^= &wires[b];
                        v
                    }
                    Gate::Not(a) => {
                        let mut v = wires[a].clone();
                        if leader {
                            v.not_assign();
                        }
                        v
                    }
                    Gate::And(..) => unreachable!("AND gates are listed separately"),
                };
                wires[offset + gi] = value;
            }
        }
        Ok(circuit.outputs().iter().map(|&w| wires[w].clone()).collect())
    }

    /// Circuit inputs where this party contributes the bits of its own share
    /// values and every other party's block is zero.
    fn own_share_inputs(&self, values: &[u64]) -> Vec<Bits> {
        let m = self.modulus().bits() as usize;
        let (me, n) = (self.party().index(), self.parties());
        let mut inputs = vec![Bits::zeros(values.len()); m * n];
        for bit in 0..m {
            inputs[me * m + bit] = values.iter().map(|v| (v >> bit) & 1 == 1).collect();
        }
        inputs
    }

    /// Boolean shares of the bits of each element: `m` wires of `x.len()` instances.
    pub fn a2b_vec(&mut self, x: &ShareVector) -> Result<Vec<Bits>> {
        self.check(x)?;
        let c = circuit::a2b_circuit(self.modulus().bits(), self.parties());
        let inputs = self.own_share_inputs(x.values());
        self.eval_circuit(&c, &inputs)
    }

    /// Arithmetic shares of XOR-shared bits, folding in one party at a time with
    /// `u + v - 2uv`.
    pub fn b2a_vec(&mut self, bits: &Bits) -> Result<ShareVector> {
        let m = self.modulus();
        let me = self.party().index();
        let own: Vec<u64> = bits.iter().map(u64::from).collect();
        let lift = |party: usize| -> Vec<u64> {
            if party == me {
                own.clone()
            } else {
                vec![0; own.len()]
            }
        };
        let mut acc = lift(0);
        for p in 1..self.parties() {
            let y = lift(p);
            let prod = self.mul_raw(&acc, &y)?;
            acc = acc
                .iter()
                .zip(&y)
                .zip(&prod)
                .map(|((&u, &v), &w)| m.sub(m.add(u, v), m.mul(2, w)))
                .collect();
        }
        Ok(self.output(acc))
    }

    /// Elementwise `[x < y]` on unsigned ring representatives.
    pub fn cmp_vec(&mut self, x: &ShareVector, y: &ShareVector) -> Result<ShareVector> {
        self.check_pair(x, y)?;
        let c = circuit::cmp_circuit(self.modulus().bits(), self.parties());
        let mut inputs = self.own_share_inputs(x.values());
        inputs.extend(self.own_share_inputs(y.values()));
        let out = self.eval_circuit(&c, &inputs)?;
        self.b2a_vec(&out[0])
    }

    /// Elementwise `[x <= ⌊M/2⌋]`.
    pub fn half_vec(&mut self, x: &ShareVector) -> Result<ShareVector> {
        self.check(x)?;
        let c = circuit::half_circuit(self.modulus().bits(), self.parties());
        let inputs = self.own_share_inputs(x.values());
        let out = self.eval_circuit(&c, &inputs)?;
        self.b2a_vec(&out[0])
    }
}
