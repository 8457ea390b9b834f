//! Blocking HTTP client for a regional server.

use std::time::Duration;

use contactpsi::aggregation::HeatmapCell;
use contactpsi::api::{
    ErrorBody, HeatmapQuery, ParamsResponse, PsiRequest, PsiResponse, UploadRequest, UploadResponse,
};
use contactpsi::client::{ClientError, Transport};
use reqwest::blocking::{Client, RequestBuilder};
use serde::de::DeserializeOwned;

#[derive(Debug, Clone)]
pub struct HttpTransport {
    base: String,
    client: Client,
}

impl HttpTransport {
    pub fn new(base_url: &str) -> Result<Self, ClientError> {
        let client = Client::builder()
            .timeout(Duration::from_secs(600))
            .build()
            .map_err(|e| ClientError::Transport(e.to_string()))?;
        Ok(HttpTransport {
            base: base_url.trim_end_matches('/').to_string(),
            client,
        })
    }

    fn url(&self, region: &str, path: &str) -> String {
        format!("{}/v1/region/{}/{}", self.base, region, path)
    }

    fn send(&self, req: RequestBuilder) -> Result<reqwest::blocking::Response, ClientError> {
        let resp = req.send().map_err(|e| ClientError::Transport(e.to_string()))?;
        let status = resp.status();
        if status.is_success() {
            return Ok(resp);
        }
        let text = resp.text().unwrap_or_default();
        Err(match serde_json::from_str::<ErrorBody>(&text) {
            Ok(body) => ClientError::from_error_body(status.as_u16(), body),
            Err(_) => ClientError::Server {
                status: status.as_u16(),
                code: "http_error".into(),
                message: text,
            },
        })
    }

    fn json<T: DeserializeOwned>(&self, req: RequestBuilder) -> Result<T, ClientError> {
        self.send(req)?
            .json()
            .map_err(|e| ClientError::Transport(format!("bad response body: {e}")))
    }

    pub fn heatmap(&self, region: &str, q: &HeatmapQuery) -> Result<Vec<HeatmapCell>, ClientError> {
        let mut params = Vec::new();
        if let Some(f) = q.from {
            params.push(format!("from={f}"));
        }
        if let Some(t) = q.to {
            params.push(format!("to={t}"));
        }
        let mut url = self.url(region, "heatmap");
        if !params.is_empty() {
            url = format!("{url}?{}", params.join("&"));
        }
        self.json(self.client.get(url))
    }

    pub fn flatfile(&self, region: &str) -> Result<String, ClientError> {
        self.send(self.client.get(self.url(region, "flatfile")))?
            .text()
            .map_err(|e| ClientError::Transport(e.to_string()))
    }
}

impl Transport for HttpTransport {
    fn params(&mut self, region: &str) -> Result<ParamsResponse, ClientError> {
        self.json(self.client.get(self.url(region, "params")))
    }

    fn upload(&mut self, region: &str, req: &UploadRequest) -> Result<UploadResponse, ClientError> {
        self.json(self.client.post(self.url(region, "carrier/upload")).json(req))
    }

    fn psi(&mut self, region: &str, req: &PsiRequest) -> Result<PsiResponse, ClientError> {
        self.json(self.client.post(self.url(region, "psi")).json(req))
    }
}
