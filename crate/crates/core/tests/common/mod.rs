#![allow(dead_code)]

use bimodal_core::authsvc::{encode_sample, AuthRequest, RegisterRequest, Request, RequestEnvelope};
use bimodal_core::face_pipeline::EyePair;
use bimodal_core::imaging::write_pgm;
use bimodal_core::speech_features::write_wav;
use bimodal_core::synthetic::{render_face, render_voice, FaceIdentity, VoiceIdentity};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub struct Subject {
    pub faces: Vec<(Vec<u8>, EyePair)>,
    pub voices: Vec<Vec<u8>>,
}

/// One synthetic identity with `faces` 140×140 images and `voices` 1 s clips.
pub fn subject(seed: u64, faces: usize, voices: usize) -> Subject {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fi = FaceIdentity::random(&mut rng);
    let vi = VoiceIdentity::random(&mut rng);
    Subject {
        faces: (0..faces)
            .map(|_| {
                let (img, eyes) = render_face(&fi, &mut rng, 140);
                (write_pgm(&img), eyes)
            })
            .collect(),
        voices: (0..voices).map(|_| write_wav(&render_voice(&vi, &mut rng, 16000, 1.0))).collect(),
    }
}

impl Subject {
    pub fn register(&self, user_id: &str, faces: std::ops::Range<usize>, voices: std::ops::Range<usize>) -> RequestEnvelope {
        RequestEnvelope {
            request_id: Some(format!("reg-{user_id}")),
            request: Request::Register(RegisterRequest {
                user_id: user_id.into(),
                face_samples: self.faces[faces.clone()].iter().map(|f| encode_sample(&f.0)).collect(),
                face_eyes: self.faces[faces].iter().map(|f| Some(f.1)).collect(),
                voice_samples: self.voices[voices].iter().map(|v| encode_sample(v)).collect(),
            }),
        }
    }

    pub fn probe(&self, face: usize, voice: usize, claim: Option<&str>) -> RequestEnvelope {
        RequestEnvelope {
            request_id: Some(format!("auth-{face}-{voice}")),
            request: Request::Authenticate(AuthRequest {
                claimed_user_id: claim.map(str::to_owned),
                face_sample: encode_sample(&self.faces[face].0),
                face_eyes: Some(self.faces[face].1),
                voice_sample: encode_sample(&self.voices[voice]),
            }),
        }
    }
}

use bimodal_core::authenticator::{AuthOutcome, Authenticator, Gallery};
use bimodal_core::profile_store::ProfileStore;

/// The same probe evaluated through direct library calls.
pub fn library_outcome(auth: &Authenticator, store: &ProfileStore, s: &Subject, face: usize, voice: usize, claim: Option<&str>) -> AuthOutcome {
    let gallery = Gallery::from_store(store).unwrap();
    let (bytes, eyes) = &s.faces[face];
    let f = auth.prepare_face(bytes, Some(*eyes), "probe").unwrap();
    let v = auth.prepare_voice(&s.voices[voice]).unwrap();
    auth.authenticate(&gallery, &f, &v, claim).unwrap()
}
